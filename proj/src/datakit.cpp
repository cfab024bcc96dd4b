#include "tinyalign/datakit.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace tinyalign {

// ---------------------------------------------------------------- regimes

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::feature_based: return "feature";
        case Regime::transformer_based: return "transformer";
        case Regime::generative: return "generative";
    }
    throw ConfigError("unknown regime");
}

Regime regime_from_name(const std::string& name) {
    if (name == "feature") return Regime::feature_based;
    if (name == "transformer") return Regime::transformer_based;
    if (name == "generative") return Regime::generative;
    throw ConfigError("unknown regime '" + name + "' (expected feature|transformer|generative)");
}

// ------------------------------------------------------------ TAF1 format

namespace {

constexpr char kMagic[4] = {'T', 'A', 'F', '1'};
constexpr unsigned char kVersion = 1;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseError::Kind::io, "cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(ParseError::Kind::io, "cannot open for write: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError(ParseError::Kind::io, "short write: " + path);
}

}  // namespace

std::string encode_features(const FeatureSequence& fs_in) {
    if (fs_in.data.shape != core::Shape{1, fs_in.n_frames, fs_in.d_a})
        throw ShapeError("feature sequence: tensor shape " + core::shape_str(fs_in.data.shape) +
                         " does not match header fields");
    nlohmann::json header{{"d_a", fs_in.d_a},
                          {"n_frames", fs_in.n_frames},
                          {"regime", regime_name(fs_in.regime)},
                          {"source_id", fs_in.source_id}};
    const std::string header_json = header.dump();
    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    put_u32le(out, static_cast<uint32_t>(header_json.size()));
    out += header_json;
    for (int64_t i = 0; i < fs_in.data.numel(); ++i)
        put_f32le(out, fs_in.data[static_cast<size_t>(i)]);
    return out;
}

FeatureSequence decode_features(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ParseError(ParseError::Kind::bad_magic, "taf: bad magic");
    if (bytes.size() < 5)
        throw ParseError(ParseError::Kind::truncated, "taf: missing version byte");
    if (static_cast<unsigned char>(bytes[4]) != kVersion)
        throw ParseError(ParseError::Kind::bad_version,
                         "taf: unsupported version " + std::to_string(bytes[4]));
    if (bytes.size() < 9) throw ParseError(ParseError::Kind::truncated, "taf: missing header length");

    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const uint32_t header_len = get_u32le(p + 5);
    if (bytes.size() < 9 + static_cast<size_t>(header_len))
        throw ParseError(ParseError::Kind::truncated, "taf: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(9, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::bad_header, std::string("taf header: ") + e.what());
    }

    FeatureSequence fs_out;
    try {
        fs_out.n_frames = header.at("n_frames").get<int>();
        fs_out.d_a = header.at("d_a").get<int>();
        fs_out.regime = regime_from_name(header.at("regime").get<std::string>());
        fs_out.source_id = header.at("source_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::bad_header, std::string("taf header: ") + e.what());
    }
    if (fs_out.n_frames < 1 || fs_out.d_a < 1)
        throw ParseError(ParseError::Kind::bad_header, "taf header: non-positive dims");

    const size_t payload_off = 9 + header_len;
    const size_t expect =
        static_cast<size_t>(fs_out.n_frames) * static_cast<size_t>(fs_out.d_a) * 4;
    const size_t have = bytes.size() - payload_off;
    if (have < expect)
        throw ParseError(ParseError::Kind::truncated, "taf: payload has " + std::to_string(have) +
                                                          " bytes, header promises " +
                                                          std::to_string(expect));
    if (have > expect)
        throw ParseError(ParseError::Kind::byte_mismatch,
                         "taf: " + std::to_string(have - expect) + " trailing bytes");

    std::vector<float> values(static_cast<size_t>(fs_out.n_frames) * fs_out.d_a);
    for (size_t i = 0; i < values.size(); ++i) values[i] = get_f32le(p + payload_off + i * 4);
    fs_out.data = core::Tensor<float>::from({1, fs_out.n_frames, fs_out.d_a}, std::move(values));
    return fs_out;
}

void write_features(const FeatureSequence& fs_in, const std::string& path) {
    write_file(path, encode_features(fs_in));
}

FeatureSequence read_features(const std::string& path) {
    return decode_features(read_file(path));
}

// ---------------------------------------------------------------- vocab

namespace {

const std::vector<std::string>& instruction_words() {
    static const std::vector<std::string> words = {"transcribe", "the", "audio",  "into",
                                                   "plain",      "text", "please", "now"};
    return words;
}

}  // namespace

const std::string& ToyVocab::token(int id) const {
    if (id < 0 || id >= size()) throw ValueError("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token[static_cast<size_t>(id)];
}

int ToyVocab::id_of(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? unknown_id : it->second;
}

int ToyVocab::content_words(int vocab_size) {
    const int reserved = 2 + static_cast<int>(instruction_words().size());
    if (vocab_size <= reserved)
        throw ConfigError("vocab: size must exceed " + std::to_string(reserved) +
                          " (specials + instruction words)");
    return vocab_size - reserved;
}

ToyVocab ToyVocab::synthetic(int vocab_size) {
    const int content = content_words(vocab_size);
    ToyVocab v;
    v.id_to_token.push_back("<pad>");
    v.id_to_token.push_back("<unk>");
    for (int i = 0; i < content; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "w%02d", i);
        v.id_to_token.push_back(buf);
    }
    for (const auto& w : instruction_words()) v.id_to_token.push_back(w);
    for (size_t i = 0; i < v.id_to_token.size(); ++i)
        v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
    return v;
}

std::vector<int> tokenize(const std::string& text, const ToyVocab& vocab) {
    std::vector<int> out;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) {
            out.push_back(vocab.id_of(word));
            word.clear();
        }
    };
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc) || std::ispunct(uc)) {
            flush();
        } else {
            word.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    flush();
    return out;
}

std::string detokenize(const std::vector<int>& ids, const ToyVocab& vocab) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += vocab.token(ids[i]);
    }
    return out;
}

void save_vocab(const ToyVocab& vocab, const std::string& path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [tok, id] : vocab.token_to_id) j[tok] = id;
    write_file(path, j.dump(2) + "\n");
}

ToyVocab load_vocab(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::bad_header, std::string("vocab: ") + e.what());
    }
    ToyVocab v;
    int max_id = -1;
    for (const auto& [tok, id] : j.items()) max_id = std::max(max_id, id.get<int>());
    v.id_to_token.assign(static_cast<size_t>(max_id + 1), "");
    for (const auto& [tok, id] : j.items()) {
        const int i = id.get<int>();
        if (i < 0 || i > max_id || !v.id_to_token[static_cast<size_t>(i)].empty())
            throw ParseError(ParseError::Kind::bad_header, "vocab: ids not dense");
        v.id_to_token[static_cast<size_t>(i)] = tok;
        v.token_to_id[tok] = i;
    }
    for (const auto& t : v.id_to_token)
        if (t.empty()) throw ParseError(ParseError::Kind::bad_header, "vocab: ids not dense");
    return v;
}

// --------------------------------------------------------------- manifest

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::string out;
    for (const auto& e : manifest) {
        nlohmann::json j{{"features", e.features}, {"text", e.text}, {"split", e.split}};
        if (!e.raw.empty()) j["raw"] = e.raw;
        out += j.dump();
        out.push_back('\n');
    }
    write_file(path, out);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(ParseError::Kind::io, "cannot open: " + path);
    DatasetManifest manifest;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.features = j.at("features").get<std::string>();
            e.text = j.at("text").get<std::string>();
            e.split = j.value("split", "train");
            e.raw = j.value("raw", "");
            manifest.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(ParseError::Kind::bad_header, path + ":" + std::to_string(line_no) +
                                                               ": " + ex.what());
        }
    }
    return manifest;
}

void verify_manifest(const DatasetManifest& manifest, const std::string& base_dir) {
    for (const auto& e : manifest) {
        (void)read_features((fs::path(base_dir) / e.features).string());
        if (!e.raw.empty()) (void)read_features((fs::path(base_dir) / e.raw).string());
    }
}

// --------------------------------------------------------------- synthesis

void SynthOptions::validate() const {
    regime.validate();
    if (token_slots < 1) throw ConfigError("synth: token_slots must be >= 1");
    if (duration_min <= 0 || duration_max < duration_min)
        throw ConfigError("synth: bad duration range");
    if (min_tokens < 1 || max_tokens < min_tokens || max_tokens > token_slots)
        throw ConfigError("synth: bad token count range");
    if (pattern_count < 1) throw ConfigError("synth: pattern_count must be >= 1");
    if (raw_samples_per_frame < 1) throw ConfigError("synth: raw_samples_per_frame must be >= 1");
}

namespace {

constexpr uint64_t kPatternSalt = 0x7a11f0a5u;

// Fixed per-pattern signature: three sinusoids across the feature axis
// with disjoint integer frequencies, so distinct patterns are orthogonal
// whenever the feature dimension leaves room. Global constants,
// independent of the dataset seed.
void pattern_direction(int pattern, int d, std::vector<float>& out) {
    SeededRng rng(mix_seed(kPatternSalt, static_cast<uint64_t>(pattern)));
    const int band = std::max(3, d / 2 - 1);
    out.assign(static_cast<size_t>(d), 0.0f);
    const double inv_sqrt3 = 0.5773502691896258;
    for (int s = 0; s < 3; ++s) {
        const int freq = 1 + (3 * pattern + s) % band;
        const double phase = rng.uniform(0.0, 6.283185307179586);
        for (int i = 0; i < d; ++i) {
            const double x = static_cast<double>(i + 1) / d;
            out[static_cast<size_t>(i)] +=
                static_cast<float>(std::sin(6.283185307179586 * freq * x + phase) * inv_sqrt3);
        }
    }
}

}  // namespace

SynthDraw synth_draw(const SynthOptions& opt, double duration, uint64_t seed) {
    opt.validate();
    SynthDraw draw;
    draw.duration = duration;
    SeededRng rng(mix_seed(seed, 1));
    draw.n_tokens = rng.range_int(opt.min_tokens, opt.max_tokens);
    draw.patterns.assign(static_cast<size_t>(opt.token_slots), -1);
    for (int j = 0; j < draw.n_tokens; ++j)
        draw.patterns[static_cast<size_t>(j)] = rng.range_int(0, opt.pattern_count - 1);
    return draw;
}

FeatureSequence synth_features_opt(const SynthOptions& opt, double duration, uint64_t seed,
                                   FeatureSequence* raw_out) {
    opt.validate();
    if (duration <= 0) throw ConfigError("synth: duration must be > 0");
    const FeatureRegime& reg = opt.regime;

    int n = 0, d = 0;
    switch (reg.kind) {
        case Regime::feature_based:
            n = std::max(1, static_cast<int>(std::lround(duration * reg.frames_per_second)));
            d = reg.d_f;
            break;
        case Regime::transformer_based:
            n = reg.fixed_len;
            d = reg.d_t;
            break;
        case Regime::generative: {
            n = std::max(1, static_cast<int>(std::lround(duration * reg.frames_per_second)));
            SeededRng dim_rng(mix_seed(seed, 2));
            d = dim_rng.range_int(reg.d_g_min, reg.d_g_max);
            break;
        }
    }

    const SynthDraw draw = synth_draw(opt, duration, seed);
    SeededRng noise_rng(mix_seed(seed, 3));
    const double env_phase = noise_rng.uniform(0.0, 6.283185307179586);

    std::vector<std::vector<float>> directions(static_cast<size_t>(opt.pattern_count));
    auto fs_out = core::Tensor<float>::zeros({1, n, d});
    float* data = fs_out.ptr();
    for (int frame = 0; frame < n; ++frame) {
        const int slot = static_cast<int>((static_cast<int64_t>(frame) * opt.token_slots) / n);
        const int pattern =
            slot < opt.token_slots ? draw.patterns[static_cast<size_t>(slot)] : -1;
        float* row = data + static_cast<size_t>(frame) * d;
        if (pattern >= 0) {
            auto& dir = directions[static_cast<size_t>(pattern)];
            if (dir.empty()) pattern_direction(pattern, d, dir);
            const double t = static_cast<double>(frame) / n * duration;
            const float env =
                static_cast<float>(0.85 + 0.15 * std::sin(6.283185307179586 * 1.3 * t + env_phase));
            for (int i = 0; i < d; ++i)
                row[i] = dir[static_cast<size_t>(i)] * env +
                         static_cast<float>(opt.noise * noise_rng.normal());
        } else {
            for (int i = 0; i < d; ++i)
                row[i] = static_cast<float>(opt.noise * noise_rng.normal());
        }
    }

    FeatureSequence result;
    result.n_frames = n;
    result.d_a = d;
    result.regime = reg.kind;
    result.source_id = "synth-" + std::to_string(seed);
    result.data = std::move(fs_out);

    if (raw_out) {
        // Raw signal upstream of the features: per frame, a short tone
        // whose frequency indexes the slot pattern. This is what the A3
        // toy encoder trains on.
        const int r = opt.raw_samples_per_frame;
        SeededRng raw_rng(mix_seed(seed, 4));
        auto raw = core::Tensor<float>::zeros({1, n, r});
        float* rp = raw.ptr();
        for (int frame = 0; frame < n; ++frame) {
            const int slot = static_cast<int>((static_cast<int64_t>(frame) * opt.token_slots) / n);
            const int pattern =
                slot < opt.token_slots ? draw.patterns[static_cast<size_t>(slot)] : -1;
            float* row = rp + static_cast<size_t>(frame) * r;
            for (int s = 0; s < r; ++s) {
                double v = 0.0;
                if (pattern >= 0)
                    v = 0.9 * std::sin(3.141592653589793 * (pattern + 2) * (s + 1) / (r + 1.0));
                row[s] = static_cast<float>(v + 0.05 * raw_rng.normal());
            }
        }
        raw_out->n_frames = n;
        raw_out->d_a = r;
        raw_out->regime = reg.kind;
        raw_out->source_id = result.source_id + ".raw";
        raw_out->data = std::move(raw);
    }
    return result;
}

FeatureSequence synth_features(const FeatureRegime& regime, double duration_seconds,
                               uint64_t seed) {
    SynthOptions opt;
    opt.regime = regime;
    return synth_features_opt(opt, duration_seconds, seed);
}

// ----------------------------------------------------------- dataset build

SyntheticDataset build_synthetic_dataset(int n_pairs, const FeatureRegime& regime, int vocab_size,
                                         uint64_t seed, const std::string& out_dir,
                                         const DatasetBuildOptions& opt) {
    if (n_pairs < 1) throw ConfigError("dataset: n_pairs must be >= 1");
    SynthOptions synth = opt.synth;
    synth.regime = regime;
    synth.validate();

    SyntheticDataset ds;
    ds.vocab = ToyVocab::synthetic(vocab_size);
    ds.table = EmbeddingTable::random_normalized(vocab_size, opt.d_l, mix_seed(seed, 0xab1e),
                                                 ToyVocab::pad_id);

    fs::create_directories(fs::path(out_dir) / "features");
    fs::create_directories(fs::path(out_dir) / "raw");

    const int content = ToyVocab::content_words(vocab_size);
    // Utterance durations snap to whole token-slot grids so pooling bins
    // line up exactly with the spoken slots for length-proportional
    // regimes; a half-covered trailing slot would blur two tokens into
    // one pooled position.
    const double slot_seconds =
        synth.token_slots / synth.regime.frames_per_second;
    auto quantize = [&](double duration) {
        if (synth.regime.kind == Regime::transformer_based) return duration;
        const double grids = std::max(1.0, std::floor(duration / slot_seconds));
        return grids * slot_seconds;
    };
    auto make_entry = [&](int index, uint64_t salt, const std::string& split) {
        const uint64_t entry_seed = mix_seed(seed, salt + static_cast<uint64_t>(index));
        SeededRng dur_rng(mix_seed(entry_seed, 0));
        const double duration =
            quantize(dur_rng.uniform(synth.duration_min, synth.duration_max));

        FeatureSequence raw;
        FeatureSequence features = synth_features_opt(synth, duration, entry_seed, &raw);
        char name[32];
        std::snprintf(name, sizeof(name), "ent_%05d", index);
        features.source_id = name;
        raw.source_id = std::string(name) + ".raw";

        ManifestEntry e;
        e.features = "features/" + std::string(name) + ".taf";
        e.raw = "raw/" + std::string(name) + ".taf";
        e.split = split;
        write_features(features, (fs::path(out_dir) / e.features).string());
        write_features(raw, (fs::path(out_dir) / e.raw).string());

        // Transcript re-derives the slot patterns from the same seed.
        const SynthDraw draw = synth_draw(synth, duration, entry_seed);
        std::string text;
        for (int j = 0; j < draw.n_tokens; ++j) {
            if (j) text.push_back(' ');
            text += ds.vocab.token(2 + draw.patterns[static_cast<size_t>(j)] % content);
        }
        e.text = text;
        ds.manifest.push_back(std::move(e));
    };

    for (int i = 0; i < n_pairs; ++i) make_entry(i, 1000000, "train");
    for (int i = 0; i < opt.eval_pairs; ++i) make_entry(n_pairs + i, 2000000, "eval");

    save_manifest(ds.manifest, (fs::path(out_dir) / "manifest.jsonl").string());
    save_vocab(ds.vocab, (fs::path(out_dir) / "vocab.json").string());
    return ds;
}

std::vector<TrainPair<float>> load_train_pairs(const DatasetManifest& manifest,
                                               const std::string& base_dir, const ToyVocab& vocab,
                                               const EmbeddingTable& table, int token_cast,
                                               const std::string& split_filter) {
    std::vector<TrainPair<float>> pairs;
    for (const auto& e : manifest) {
        if (!split_filter.empty() && e.split != split_filter) continue;
        TrainPair<float> p;
        p.features = read_features((fs::path(base_dir) / e.features).string()).data;
        p.cast_ids = cast_tokens(tokenize(e.text, vocab), token_cast, table.pad_id);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace tinyalign
