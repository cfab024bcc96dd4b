#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "tinyalign/datakit.hpp"
#include "test_support.hpp"

using namespace tinyalign;
namespace fs = std::filesystem;

namespace {

FeatureSequence random_sequence(SeededRng& rng) {
    FeatureSequence f;
    f.n_frames = rng.range_int(1, 24);
    f.d_a = rng.range_int(1, 20);
    f.regime = static_cast<Regime>(rng.range_int(0, 2));
    f.source_id = "t" + std::to_string(rng.below(100000));
    f.data = core::Tensor<float>::zeros({1, f.n_frames, f.d_a});
    for (auto& v : *f.data.data) v = static_cast<float>(rng.uniform(-3, 3));
    return f;
}

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("feature files round trip bit-exactly, including regime metadata") {
    SeededRng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        auto f = random_sequence(rng);
        auto bytes = encode_features(f);
        auto back = decode_features(bytes);
        CHECK(back.n_frames == f.n_frames);
        CHECK(back.d_a == f.d_a);
        CHECK(back.regime == f.regime);
        CHECK(back.source_id == f.source_id);
        REQUIRE(encode_features(back) == bytes);
    }
}

TEST_CASE("feature file parse failures are typed errors") {
    SeededRng rng(2);
    auto f = random_sequence(rng);
    auto good = encode_features(f);

    auto expect_kind = [](const std::string& bytes, ParseError::Kind kind) {
        try {
            (void)decode_features(bytes);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind() == kind);
        }
    };

    auto bad_magic = good;
    bad_magic[2] = 'X';
    expect_kind(bad_magic, ParseError::Kind::bad_magic);

    expect_kind(good.substr(0, 3), ParseError::Kind::bad_magic);
    expect_kind(good.substr(0, good.size() - 5), ParseError::Kind::truncated);
    expect_kind(good + std::string(3, '\0'), ParseError::Kind::byte_mismatch);

    auto bad_version = good;
    bad_version[4] = 9;
    expect_kind(bad_version, ParseError::Kind::bad_version);
}

TEST_CASE("transformer regime always yields [1, 1500, 512]") {
    FeatureRegime regime;
    regime.kind = Regime::transformer_based;
    for (double dur : {0.3, 1.0, 4.7}) {
        auto f = synth_features(regime, dur, 5);
        CHECK(f.n_frames == 1500);
        CHECK(f.d_a == 512);
        CHECK(f.data.shape == core::Shape{1, 1500, 512});
    }
}

TEST_CASE("feature regime: N = round(duration * rate), strictly increasing in duration") {
    FeatureRegime regime;  // feature_based, 50 fps, d 768
    auto f = synth_features(regime, 2.0, 9);
    CHECK(f.n_frames == 100);
    CHECK(f.d_a == 768);

    int prev = 0;
    for (double dur = 0.2; dur < 2.0; dur += 0.1) {
        auto g = synth_features(regime, dur, 9);
        CHECK(g.n_frames > prev);
        prev = g.n_frames;
    }
}

TEST_CASE("generative regime draws the dimension from the configured range") {
    FeatureRegime regime;
    regime.kind = Regime::generative;
    regime.d_g_min = 16;
    regime.d_g_max = 32;
    bool varied = false;
    int first = -1;
    for (uint64_t seed = 0; seed < 12; ++seed) {
        auto f = synth_features(regime, 0.5, seed);
        CHECK(f.d_a >= 16);
        CHECK(f.d_a <= 32);
        if (first < 0) first = f.d_a;
        if (f.d_a != first) varied = true;
    }
    CHECK(varied);
}

TEST_CASE("synthesis is deterministic per (regime, duration, seed)") {
    FeatureRegime regime;
    regime.d_f = 32;
    auto a = synth_features(regime, 0.7, 42);
    auto b = synth_features(regime, 0.7, 42);
    CHECK(a.data.byte_hash() == b.data.byte_hash());
    auto c = synth_features(regime, 0.7, 43);
    CHECK(a.data.byte_hash() != c.data.byte_hash());
}

TEST_CASE("tokenizer: lookup, empty, unknown, punctuation, idempotence") {
    auto vocab = ToyVocab::synthetic(16);
    const int the_id = vocab.id_of("the");
    CHECK(the_id != ToyVocab::unknown_id);  // instruction word present

    CHECK(tokenize("", vocab).empty());
    CHECK(tokenize("zzz", vocab) == std::vector<int>{ToyVocab::unknown_id});
    CHECK(tokenize("The, audio!", vocab) ==
          std::vector<int>{the_id, vocab.id_of("audio")});

    // On in-vocab text, detokenize then tokenize is the identity.
    std::vector<int> ids = {vocab.id_of("w00"), the_id, vocab.id_of("w03")};
    CHECK(tokenize(detokenize(ids, vocab), vocab) == ids);
}

TEST_CASE("vocab round trips through its JSON file") {
    auto vocab = ToyVocab::synthetic(20);
    auto dir = temp_dir("tinyalign_vocab_test");
    auto path = (dir / "vocab.json").string();
    save_vocab(vocab, path);
    auto back = load_vocab(path);
    CHECK(back.id_to_token == vocab.id_to_token);
    CHECK(back.token_to_id == vocab.token_to_id);
}

TEST_CASE("build_synthetic_dataset: manifest size, reload, determinism") {
    FeatureRegime regime;
    regime.d_f = 12;
    DatasetBuildOptions opt;
    opt.d_l = 8;
    opt.synth.duration_min = 0.2;
    opt.synth.duration_max = 0.4;

    auto dir1 = temp_dir("tinyalign_ds1");
    auto ds1 = build_synthetic_dataset(10, regime, 16, 111, dir1.string(), opt);
    REQUIRE(ds1.manifest.size() == 10);
    CHECK_NOTHROW(verify_manifest(ds1.manifest, dir1.string()));

    auto reloaded = load_manifest((dir1 / "manifest.jsonl").string());
    REQUIRE(reloaded.size() == 10);
    for (size_t i = 0; i < reloaded.size(); ++i) {
        CHECK(reloaded[i].features == ds1.manifest[i].features);
        CHECK(reloaded[i].text == ds1.manifest[i].text);
        CHECK(reloaded[i].split == "train");
        CHECK_FALSE(reloaded[i].raw.empty());
    }

    // Same seed on a fresh directory: identical file contents.
    auto dir2 = temp_dir("tinyalign_ds2");
    auto ds2 = build_synthetic_dataset(10, regime, 16, 111, dir2.string(), opt);
    CHECK(ds2.table.byte_hash() == ds1.table.byte_hash());
    for (size_t i = 0; i < ds1.manifest.size(); ++i) {
        auto f1 = read_features((dir1 / ds1.manifest[i].features).string());
        auto f2 = read_features((dir2 / ds2.manifest[i].features).string());
        CHECK(f1.data.byte_hash() == f2.data.byte_hash());
        CHECK(ds1.manifest[i].text == ds2.manifest[i].text);
    }

    // Transcripts stay within the content-word range and cast cleanly.
    for (const auto& e : ds1.manifest) {
        auto ids = tokenize(e.text, ds1.vocab);
        CHECK(!ids.empty());
        for (int id : ids) {
            CHECK(id >= 2);
            CHECK(id < ds1.vocab.size());
        }
    }
}

TEST_CASE("build_synthetic_dataset: singleton and eval split") {
    FeatureRegime regime;
    regime.d_f = 6;
    DatasetBuildOptions opt;
    opt.d_l = 4;
    opt.eval_pairs = 3;
    opt.synth.duration_min = 0.2;
    opt.synth.duration_max = 0.3;
    auto dir = temp_dir("tinyalign_ds3");
    auto ds = build_synthetic_dataset(1, regime, 14, 5, dir.string(), opt);
    REQUIRE(ds.manifest.size() == 4);
    CHECK(ds.manifest[0].split == "train");
    for (size_t i = 1; i < 4; ++i) CHECK(ds.manifest[i].split == "eval");

    auto pairs = load_train_pairs(ds.manifest, dir.string(), ds.vocab, ds.table, 7, "train");
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].cast_ids.size() == 7);
}

TEST_CASE("verify_manifest raises on a missing file") {
    DatasetManifest manifest;
    manifest.push_back({"does_not_exist.taf", "hello", "train", ""});
    CHECK_THROWS_AS(verify_manifest(manifest, "."), ParseError);
}
