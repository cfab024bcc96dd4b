#pragma once

// Shared plumbing: error types, deterministic RNG, byte hashing,
// little-endian encode/decode, number formatting.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <charconv>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tinyalign {

// ---------------------------------------------------------------- errors

// Shape or dimension mismatch between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API misuse (backward on a consumed tape, non-scalar loss, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid configuration values.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Runtime data problem (non-finite loss, bad token id, ...).
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Typed file-format failures. `kind()` distinguishes the cases the
// formats can run into without ever crashing the process.
class ParseError : public std::runtime_error {
public:
    enum class Kind {
        bad_magic,
        bad_version,
        truncated,
        byte_mismatch,
        bad_header,
        io,
    };

    ParseError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// ---------------------------------------------------------------- hashing

// FNV-1a over raw bytes. Used for freeze-discipline checks on parameter
// buffers and for content hashes in tests.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <class T>
uint64_t fnv1a_span(const T* data, size_t count, uint64_t h = 1469598103934665603ull) {
    return fnv1a(data, count * sizeof(T), h);
}

// Stable integer mix for deriving per-entry seeds from (master seed, index).
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------- rng

// mt19937_64 with hand-rolled value conversions. std::uniform_*_distribution
// is implementation-defined, so every draw here goes through explicit
// arithmetic to keep streams identical across standard libraries.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n)
    uint64_t below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

    int range_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Box-Muller, cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u = 1.0 - uniform01();
        double v = uniform01();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 6.283185307179586 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + sigma * r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------- little endian

inline void put_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_f32le(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
}

inline float get_f32le(const unsigned char* p) {
    uint32_t bits = get_u32le(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// ---------------------------------------------------------------- formatting

// Shortest round-trip decimal. Keeps CSV/JSON output byte-stable.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace tinyalign
