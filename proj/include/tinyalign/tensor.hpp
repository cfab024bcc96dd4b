#pragma once

// Dense row-major tensor values. Data is shared_ptr-owned so tensors are
// cheap value types; ops never mutate an existing buffer.

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tinyalign/common.hpp"

namespace tinyalign::core {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <class R>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<R>> data;
    bool requires_grad = false;
    // Tape bookkeeping: id of the node that produced this value, and the
    // tape it belongs to. -1 means leaf or constant.
    int node = -1;
    int64_t tape_id = -1;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        Tensor t;
        validate_shape(s);
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<R>>(static_cast<size_t>(shape_numel(t.shape)), R(0));
        return t;
    }

    static Tensor full(Shape s, R v) {
        Tensor t = zeros(std::move(s));
        for (auto& x : *t.data) x = v;
        return t;
    }

    static Tensor from(Shape s, std::vector<R> values) {
        validate_shape(s);
        if (shape_numel(s) != static_cast<int64_t>(values.size()))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<R>>(std::move(values));
        return t;
    }

    int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i < 0 ? rank() + i : i)]; }

    R* ptr() { return data->data(); }
    const R* ptr() const { return data->data(); }

    R& operator[](size_t i) { return (*data)[i]; }
    const R& operator[](size_t i) const { return (*data)[i]; }

    // Row-major element access for tests and small utilities.
    R at(std::initializer_list<int> idx) const {
        size_t off = 0;
        size_t i = 0;
        for (int v : idx) {
            off = off * static_cast<size_t>(shape[i]) + static_cast<size_t>(v);
            ++i;
        }
        return (*data)[off];
    }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<R>>(*data);
        t.requires_grad = requires_grad;
        return t;
    }

    // Identity of the underlying buffer; used as the gradient-map key.
    const void* key() const { return static_cast<const void*>(data.get()); }

    uint64_t byte_hash() const { return fnv1a_span(ptr(), static_cast<size_t>(numel())); }

    bool all_finite() const {
        for (const R& v : *data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class R2>
    Tensor<R2> cast() const {
        Tensor<R2> t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<R2>>(data->size());
        for (size_t i = 0; i < data->size(); ++i) (*t.data)[i] = static_cast<R2>((*data)[i]);
        t.requires_grad = requires_grad;
        return t;
    }

    static Tensor param(Shape s, std::vector<R> values) {
        Tensor t = from(std::move(s), std::move(values));
        t.requires_grad = true;
        return t;
    }

private:
    // Zero-sized dims are allowed (an empty instruction embeds to a
    // zero-row matrix); negative dims are not.
    static void validate_shape(const Shape& s) {
        for (int d : s)
            if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    }
};

// Ordered named parameter collection. Order is the serialization,
// optimizer-state and hashing order, so it must stay stable.
template <class R>
class ParamSet {
public:
    void add(std::string name, Tensor<R> t) {
        t.requires_grad = true;
        entries_.emplace_back(std::move(name), std::move(t));
    }

    size_t size() const { return entries_.size(); }

    Tensor<R>& operator[](size_t i) { return entries_[i].second; }
    const Tensor<R>& operator[](size_t i) const { return entries_[i].second; }
    const std::string& name(size_t i) const { return entries_[i].first; }

    Tensor<R>& get(const std::string& name) {
        for (auto& [n, t] : entries_)
            if (n == name) return t;
        throw ContractError("no parameter named " + name);
    }
    const Tensor<R>& get(const std::string& name) const {
        return const_cast<ParamSet*>(this)->get(name);
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& [_, t] : entries_) n += t.numel();
        return n;
    }

    uint64_t byte_hash() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& [name, t] : entries_) {
            h = fnv1a(name.data(), name.size(), h);
            h = fnv1a_span(t.ptr(), static_cast<size_t>(t.numel()), h);
        }
        return h;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<std::pair<std::string, Tensor<R>>> entries_;
};

}  // namespace tinyalign::core
