#include "tinyalign/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace tinyalign {

namespace {

constexpr char kMagic[4] = {'T', 'A', 'B', 'F'};
constexpr unsigned char kVersion = 1;

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(ParseError::Kind::io, "cannot open for write: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError(ParseError::Kind::io, "short write: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseError::Kind::io, "cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what)
        : p_(reinterpret_cast<const unsigned char*>(bytes.data())), n_(bytes.size()),
          what_(std::move(what)) {}

    const unsigned char* take(size_t count) {
        if (off_ + count > n_)
            throw ParseError(ParseError::Kind::truncated,
                             what_ + ": truncated at byte " + std::to_string(off_));
        const unsigned char* out = p_ + off_;
        off_ += count;
        return out;
    }

    uint32_t u32() { return get_u32le(take(4)); }
    unsigned char u8() { return *take(1); }

    std::string str(size_t len) {
        const unsigned char* s = take(len);
        return std::string(reinterpret_cast<const char*>(s), len);
    }

    size_t remaining() const { return n_ - off_; }

private:
    const unsigned char* p_;
    size_t n_;
    size_t off_ = 0;
    std::string what_;
};

}  // namespace

std::string tabf_encode(const std::string& config_json, const core::ParamSet<float>& params) {
    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    put_u32le(out, static_cast<uint32_t>(config_json.size()));
    out += config_json;
    put_u32le(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32le(out, static_cast<uint32_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.rank()));
        for (int d : t.shape) put_u32le(out, static_cast<uint32_t>(d));
        for (int64_t i = 0; i < t.numel(); ++i) put_f32le(out, t[static_cast<size_t>(i)]);
    }
    return out;
}

TabfFile tabf_decode(const std::string& bytes) {
    Reader r(bytes, "tabf");
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ParseError(ParseError::Kind::bad_magic, "tabf: bad magic");
    r.take(4);
    unsigned char version = r.u8();
    if (version != kVersion)
        throw ParseError(ParseError::Kind::bad_version,
                         "tabf: unsupported version " + std::to_string(version));
    TabfFile file;
    file.config_json = r.str(r.u32());
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str(r.u32());
        const int rank = r.u8();
        core::Shape shape(static_cast<size_t>(rank));
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape[static_cast<size_t>(d)] = static_cast<int>(r.u32());
            numel *= shape[static_cast<size_t>(d)];
        }
        if (numel < 0 || numel > (1ll << 32))
            throw ParseError(ParseError::Kind::bad_header, "tabf: implausible tensor size");
        std::vector<float> values(static_cast<size_t>(numel));
        const unsigned char* raw = r.take(static_cast<size_t>(numel) * 4);
        for (int64_t j = 0; j < numel; ++j)
            values[static_cast<size_t>(j)] = get_f32le(raw + j * 4);
        file.params.add(std::move(name), core::Tensor<float>::from(shape, std::move(values)));
    }
    if (r.remaining() != 0)
        throw ParseError(ParseError::Kind::byte_mismatch,
                         "tabf: " + std::to_string(r.remaining()) + " trailing bytes");
    return file;
}

void tabf_save(const std::string& path, const std::string& config_json,
               const core::ParamSet<float>& params) {
    write_file(path, tabf_encode(config_json, params));
}

TabfFile tabf_load(const std::string& path) { return tabf_decode(read_file(path)); }

// -------------------------------------------------------------- bridgeformer

namespace {

nlohmann::json require_kind(const std::string& config_json, const std::string& kind) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::bad_header, std::string("tabf config: ") + e.what());
    }
    if (j.value("kind", "") != kind)
        throw ParseError(ParseError::Kind::bad_header,
                         "tabf config: expected kind '" + kind + "', got '" +
                             j.value("kind", "<missing>") + "'");
    return j;
}

}  // namespace

void save_bridgeformer(const std::string& path, const BridgeFormer<float>& model) {
    nlohmann::json j{{"kind", "bridgeformer"},
                     {"d_a", model.cfg.d_a},
                     {"hidden", model.cfg.hidden},
                     {"heads", model.cfg.heads},
                     {"layers", model.cfg.layers},
                     {"token_cast", model.cfg.token_cast},
                     {"d_l", model.cfg.d_l},
                     {"seed", model.cfg.seed}};
    tabf_save(path, j.dump(), model.params);
}

BridgeFormer<float> load_bridgeformer(const std::string& path) {
    TabfFile file = tabf_load(path);
    nlohmann::json j = require_kind(file.config_json, "bridgeformer");
    BridgeFormerConfig cfg;
    cfg.d_a = j.at("d_a").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.token_cast = j.at("token_cast").get<int>();
    cfg.d_l = j.at("d_l").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.validate();

    BridgeFormer<float> model = BridgeFormer<float>::init(cfg);
    if (model.params.size() != file.params.size())
        throw ParseError(ParseError::Kind::bad_header, "bridgeformer checkpoint: parameter count " +
                                                           std::to_string(file.params.size()) +
                                                           " does not match config");
    for (size_t i = 0; i < file.params.size(); ++i) {
        const auto& loaded = file.params[i];
        auto& dst = model.params.get(file.params.name(i));
        if (dst.shape != loaded.shape)
            throw ParseError(ParseError::Kind::bad_header, "bridgeformer checkpoint: shape of " +
                                                               file.params.name(i) +
                                                               " does not match config");
        *dst.data = *loaded.data;
    }
    return model;
}

// -------------------------------------------------------------------- toylm

void save_toylm(const std::string& path, const ToyLm<float>& lm) {
    nlohmann::json j{{"kind", "toylm"},
                     {"d_l", lm.cfg.d_l},
                     {"heads", lm.cfg.heads},
                     {"layers", lm.cfg.layers},
                     {"seed", lm.cfg.seed},
                     {"vocab_size", lm.table.vocab_size},
                     {"pad_id", lm.table.pad_id}};
    core::ParamSet<float> with_table;
    for (const auto& [name, t] : lm.params) with_table.add(name, t);
    with_table.add("embedding.weights", lm.table.weights);
    tabf_save(path, j.dump(), with_table);
}

ToyLm<float> load_toylm(const std::string& path) {
    TabfFile file = tabf_load(path);
    nlohmann::json j = require_kind(file.config_json, "toylm");
    ToyLmConfig cfg;
    cfg.d_l = j.at("d_l").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.validate();

    EmbeddingTable table;
    table.vocab_size = j.at("vocab_size").get<int>();
    table.d_l = cfg.d_l;
    table.pad_id = j.at("pad_id").get<int>();
    const auto& weights = file.params.get("embedding.weights");
    if (weights.shape != core::Shape{table.vocab_size, table.d_l})
        throw ParseError(ParseError::Kind::bad_header, "toylm checkpoint: embedding shape mismatch");
    table.weights = weights.clone();
    table.weights.requires_grad = false;

    ToyLm<float> lm = ToyLm<float>::init(cfg, std::move(table));
    for (size_t i = 0; i < file.params.size(); ++i) {
        if (file.params.name(i) == "embedding.weights") continue;
        auto& dst = lm.params.get(file.params.name(i));
        if (dst.shape != file.params[i].shape)
            throw ParseError(ParseError::Kind::bad_header, "toylm checkpoint: shape of " +
                                                               file.params.name(i) + " mismatch");
        *dst.data = *file.params[i].data;
    }
    lm.rebuild_tied_head();
    return lm;
}

}  // namespace tinyalign
