#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "tinyalign/checkpoint.hpp"
#include "tinyalign/evalmetrics.hpp"
#include "test_support.hpp"

using namespace tinyalign;
namespace fs = std::filesystem;

TEST_CASE("rouge1: perfect match, disjoint, clipped hand example") {
    std::vector<int> same = {1, 2, 3};
    CHECK(rouge1(same, same).f1 == doctest::Approx(1.0));
    CHECK(rouge1({1, 2}, {3, 4}).f1 == doctest::Approx(0.0));

    // ref "the cat sat on the mat", hyp "the cat on mat":
    // clipped overlap 4, P = 1.0, R = 4/6, F1 = 0.8
    std::vector<int> ref = {0, 1, 2, 3, 0, 4};
    std::vector<int> hyp = {0, 1, 3, 4};
    auto s = rouge1(ref, hyp);
    CHECK(s.precision == doctest::Approx(1.0));
    CHECK(s.recall == doctest::Approx(4.0 / 6.0));
    CHECK(s.f1 == doctest::Approx(0.8));

    // Clipping: hyp repeats a token more often than the reference has it.
    auto clipped = rouge1({7, 8}, {7, 7, 7});
    CHECK(clipped.precision == doctest::Approx(1.0 / 3.0));
    CHECK(clipped.recall == doctest::Approx(0.5));
}

TEST_CASE("rougeL: perfect match, subsequence hand example, reversed input") {
    std::vector<int> same = {4, 5, 6, 7};
    CHECK(rougeL(same, same).f1 == doctest::Approx(1.0));

    // ref "the cat sat", hyp "the sat": LCS 2, P = 1.0, R = 2/3, F1 = 0.8
    auto s = rougeL({0, 1, 2}, {0, 2});
    CHECK(s.precision == doctest::Approx(1.0));
    CHECK(s.recall == doctest::Approx(2.0 / 3.0));
    CHECK(s.f1 == doctest::Approx(0.8));

    // Distinct tokens reversed: LCS length 1 (brute-force confirmed).
    std::vector<int> fwd = {1, 2, 3, 4, 5, 6};
    std::vector<int> rev(fwd.rbegin(), fwd.rend());
    CHECK(lcs_length(fwd, rev) == 1);
    CHECK(test_support::lcs_bruteforce(fwd, rev) == 1);
}

TEST_CASE("empty-side conventions") {
    std::vector<int> empty, some = {1, 2};
    CHECK(rouge1(empty, empty).f1 == doctest::Approx(1.0));
    CHECK(rougeL(empty, empty).f1 == doctest::Approx(1.0));
    CHECK(rouge1(empty, some).f1 == doctest::Approx(0.0));
    CHECK(rouge1(some, empty).f1 == doctest::Approx(0.0));
    CHECK(rougeL(some, empty).f1 == doctest::Approx(0.0));
}

TEST_CASE("f1 symmetry under argument exchange at equal lengths") {
    SeededRng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int len = rng.range_int(0, 7);
        std::vector<int> a(static_cast<size_t>(len)), b(static_cast<size_t>(len));
        for (auto& v : a) v = rng.range_int(0, 4);
        for (auto& v : b) v = rng.range_int(0, 4);
        CHECK(rouge1(a, b).f1 == doctest::Approx(rouge1(b, a).f1).epsilon(1e-12));
        CHECK(rougeL(a, b).f1 == doctest::Approx(rougeL(b, a).f1).epsilon(1e-12));
        // A subsequence match is also a bag match.
        CHECK(lcs_length(a, b) <= clipped_unigram_overlap(a, b));
    }
}

TEST_CASE("oracle equivalence on exhaustive short pairs over a 5-token alphabet") {
    // All pairs with combined length <= 7 here; the acceptance suite
    // pushes the sweep to combined length 8 plus random sampling.
    std::vector<std::vector<int>> pool;
    pool.push_back({});
    for (size_t begin = 0, end = pool.size(), len = 0; len < 7; ++len) {
        for (size_t i = begin; i < end; ++i)
            for (int tok = 0; tok < 5; ++tok) {
                auto next = pool[i];
                next.push_back(tok);
                pool.push_back(std::move(next));
            }
        begin = end;
        end = pool.size();
    }
    int checked = 0;
    for (const auto& a : pool)
        for (const auto& b : pool) {
            if (a.size() + b.size() > 7) continue;
            CHECK(clipped_unigram_overlap(a, b) == test_support::unigram_overlap_oracle(a, b));
            CHECK(lcs_length(a, b) == test_support::lcs_bruteforce(a, b));
            ++checked;
        }
    CHECK(checked > 100000);
}

TEST_CASE("dp lcs equals the independent memoized implementation on long pairs") {
    SeededRng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<int> a(static_cast<size_t>(rng.range_int(0, 40)));
        std::vector<int> b(static_cast<size_t>(rng.range_int(0, 40)));
        for (auto& v : a) v = rng.range_int(0, 6);
        for (auto& v : b) v = rng.range_int(0, 6);
        CHECK(lcs_length(a, b) == test_support::lcs_memo(a, b));
    }
}

TEST_CASE("convergence_time: first crossing, non-attainment, default target") {
    TrainReport r;
    r.loss_history = {0.5, 0.04, 0.01};
    r.epochs_run = 3;
    r.wall_clock_seconds = 9.0;
    auto ct = convergence_time(r, 0.05);
    REQUIRE(ct.has_value());
    CHECK(ct->first == 2);
    CHECK(ct->second == doctest::Approx(6.0));  // 9s * 2/3

    TrainReport never;
    never.loss_history = {0.9, 0.8};
    never.epochs_run = 2;
    CHECK(!convergence_time(never, 0.05).has_value());

    TrainConfig defaults;
    REQUIRE(defaults.target_loss.has_value());
    CHECK(*defaults.target_loss == 0.05);
}

TEST_CASE("dual_path_eval: oracle projector scores f1 = 1.0 on every entry") {
    auto dir = fs::temp_directory_path() / "tinyalign_dualpath";
    fs::remove_all(dir);

    FeatureRegime regime;
    regime.d_f = 12;
    DatasetBuildOptions opt;
    opt.d_l = 8;
    opt.synth.duration_min = 0.2;
    opt.synth.duration_max = 0.4;
    auto ds = build_synthetic_dataset(6, regime, 16, 77, dir.string(), opt);

    ToyLmConfig lm_cfg;
    lm_cfg.d_l = 8;
    lm_cfg.heads = 2;
    lm_cfg.seed = 5;
    auto lm = ToyLm<float>::init(lm_cfg, ds.table);

    GenerationSettings greedy;
    greedy.temperature = 0.0;
    greedy.max_len = 8;

    auto oracle = dual_path_eval(oracle_projector(), lm, ds.table, ds.manifest, dir.string(),
                                 ds.vocab, "transcribe the audio", greedy, 6);
    REQUIRE(oracle.n_entries == 6);
    CHECK(oracle.n_skipped == 0);
    CHECK(oracle.rouge1_mean.f1 == doctest::Approx(1.0));
    CHECK(oracle.rougeL_mean.f1 == doctest::Approx(1.0));
    for (const auto& e : oracle.entries) CHECK(e.r1.f1 == doctest::Approx(1.0));

    // An untrained random projector scores strictly below the oracle.
    BridgeFormerConfig pcfg;
    pcfg.d_a = 12;
    pcfg.hidden = 16;
    pcfg.heads = 2;
    pcfg.layers = 1;
    pcfg.token_cast = 6;
    pcfg.d_l = 8;
    pcfg.seed = 3;
    auto untrained = BridgeFormer<float>::init(pcfg);
    auto random_scores = dual_path_eval(projector_fn(untrained), lm, ds.table, ds.manifest,
                                        dir.string(), ds.vocab, "transcribe the audio", greedy, 6);
    CHECK(random_scores.rouge1_mean.f1 < 1.0);
}

TEST_CASE("dual_path_eval skips unreadable entries with a count") {
    auto dir = fs::temp_directory_path() / "tinyalign_dualpath_skip";
    fs::remove_all(dir);

    FeatureRegime regime;
    regime.d_f = 6;
    DatasetBuildOptions opt;
    opt.d_l = 8;
    opt.synth.duration_min = 0.2;
    opt.synth.duration_max = 0.3;
    auto ds = build_synthetic_dataset(3, regime, 16, 9, dir.string(), opt);

    // Corrupt one feature file.
    {
        std::ofstream f((dir / ds.manifest[1].features).string(),
                        std::ios::binary | std::ios::trunc);
        f << "corrupt";
    }

    ToyLmConfig lm_cfg;
    lm_cfg.d_l = 8;
    lm_cfg.heads = 2;
    auto lm = ToyLm<float>::init(lm_cfg, ds.table);
    GenerationSettings greedy;
    greedy.temperature = 0.0;
    greedy.max_len = 4;
    auto result = dual_path_eval(oracle_projector(), lm, ds.table, ds.manifest, dir.string(),
                                 ds.vocab, "", greedy, 6);
    CHECK(result.n_entries == 2);
    CHECK(result.n_skipped == 1);
    REQUIRE(result.entries.size() == 3);
    CHECK(result.entries[1].skipped);
    CHECK(result.rouge1_mean.f1 == doctest::Approx(1.0));
}
