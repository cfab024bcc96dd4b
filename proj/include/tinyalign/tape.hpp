#pragma once

// Reverse-mode autodiff over an op tape. Ops validate shapes, compute the
// output value through the kernels, and (when the tape is recording and an
// input is differentiable) push a node whose closure scatters upstream
// gradients into its inputs. backward() consumes the tape: one reverse
// sweep, then the tape refuses further use.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "tinyalign/kernels.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign::core {

template <class R>
class GradMap {
public:
    // Gradient for a parameter; exactly zero if the parameter never
    // reached the loss.
    Tensor<R> of(const Tensor<R>& p) const {
        auto it = grads_.find(p.key());
        if (it == grads_.end() || it->second.empty()) return Tensor<R>::zeros(p.shape);
        return Tensor<R>::from(p.shape, it->second);
    }

    bool reached(const Tensor<R>& p) const {
        auto it = grads_.find(p.key());
        return it != grads_.end() && !it->second.empty();
    }

    void put(const void* key, std::vector<R> g) { grads_[key] = std::move(g); }

    size_t size() const { return grads_.size(); }

private:
    std::unordered_map<const void*, std::vector<R>> grads_;
};

template <class R>
class Tape {
public:
    using BackFn = std::function<void(const std::vector<R>&, Tape&)>;

    struct Node {
        std::vector<int> in;
        BackFn back;           // empty for leaves
        std::vector<R> grad;   // lazily sized
        int64_t numel = 0;
        const void* leaf_key = nullptr;
    };

    explicit Tape(bool recording = true) : recording_(recording), id_(next_id()++) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_ && !consumed_; }
    int64_t id() const { return id_; }
    size_t node_count() const { return nodes_.size(); }

    // Resolves a tensor to a node id on this tape: an activation made
    // here keeps its node, a requires_grad leaf is registered once per
    // tape, anything else is a constant (-1).
    int input_id(const Tensor<R>& t) {
        if (t.node >= 0 && t.tape_id == id_) return t.node;
        if (t.requires_grad && t.node < 0) {
            auto it = leaf_ids_.find(t.key());
            if (it != leaf_ids_.end()) return it->second;
            Node n;
            n.numel = t.numel();
            n.leaf_key = t.key();
            nodes_.push_back(std::move(n));
            int id = static_cast<int>(nodes_.size()) - 1;
            leaf_ids_.emplace(t.key(), id);
            return id;
        }
        return -1;
    }

    int push(std::vector<int> in, int64_t out_numel, BackFn back) {
        Node n;
        n.in = std::move(in);
        n.numel = out_numel;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<R>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel), R(0));
        return n.grad;
    }

    // Reverse sweep from a scalar loss. Consumes the tape.
    GradMap<R> backward(const Tensor<R>& loss) {
        if (consumed_) throw ContractError("tape already consumed by a backward pass");
        if (!recording_) throw ContractError("backward on a non-recording tape");
        if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");
        if (loss.node < 0 || loss.tape_id != id_)
            throw ContractError("loss was not produced through this tape");
        consumed_ = true;

        grad_buf(loss.node)[0] = R(1);
        for (int id = loss.node; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.grad.empty() && n.back) n.back(n.grad, *this);
        }

        GradMap<R> out;
        for (const Node& n : nodes_)
            if (n.leaf_key) out.put(n.leaf_key, n.grad);
        return out;
    }

private:
    static int64_t& next_id() {
        static int64_t id = 0;
        return id;
    }

    bool recording_;
    bool consumed_ = false;
    int64_t id_;
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaf_ids_;
};

namespace detail {

template <class R>
Tensor<R> make_out(Tape<R>& tape, Shape shape, std::vector<R> values, std::vector<int> in,
                   typename Tape<R>::BackFn back) {
    Tensor<R> out = Tensor<R>::from(std::move(shape), std::move(values));
    bool tracked = false;
    for (int id : in)
        if (id >= 0) tracked = true;
    if (tape.recording() && tracked) {
        out.node = tape.push(std::move(in), out.numel(), std::move(back));
        out.tape_id = tape.id();
        out.requires_grad = true;
    }
    return out;
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

// Interprets a tensor as (rows x cols) over its last dimension.
inline std::pair<int64_t, int> rows_cols(const Shape& s, const char* op) {
    if (s.empty()) throw ShapeError(std::string(op) + ": rank-0 tensor");
    int cols = s.back();
    int64_t rows = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
    return {rows, cols};
}

}  // namespace detail

// --------------------------------------------------------------- matmul

// a [.., m, k] x b [.., k, n] -> [.., m, n]. Leading batch dims must be
// equal, or b may be rank-2 (a shared weight applied per batch row).
template <class R>
Tensor<R> matmul(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must be at least rank-2, got " + shape_str(a.shape) +
                         " x " + shape_str(b.shape));
    const int m = a.dim(-2), k = a.dim(-1);
    const int kb = b.dim(-2), n = b.dim(-1);
    if (k != kb)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
    if (m < 1 || k < 1 || n < 1) throw ShapeError("matmul: empty operand");

    Shape abatch(a.shape.begin(), a.shape.end() - 2);
    Shape bbatch(b.shape.begin(), b.shape.end() - 2);
    const bool shared_b = bbatch.empty();
    if (!shared_b && abatch != bbatch)
        throw ShapeError("matmul: batch dimensions differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
    int64_t batch = 1;
    for (int d : abatch) batch *= d;

    Shape out_shape = abatch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<R> out(static_cast<size_t>(batch) * m * n);

    if (shared_b) {
        // Flatten batch into rows: one big gemm.
        kernels::gemm_nn(a.ptr(), b.ptr(), out.data(), static_cast<int>(batch * m), k, n);
    } else {
        for (int64_t bi = 0; bi < batch; ++bi)
            kernels::gemm_nn(a.ptr() + bi * m * k, b.ptr() + bi * k * n, out.data() + bi * m * n,
                             m, k, n);
    }

    int ia = tape.input_id(a), ib = tape.input_id(b);
    auto av = a.data;
    auto bv = b.data;
    return detail::make_out<R>(
        tape, std::move(out_shape), std::move(out), {ia, ib},
        [ia, ib, av, bv, m, k, n, batch, shared_b](const std::vector<R>& g, Tape<R>& t) {
            std::vector<R> scratch;
            if (ia >= 0) {
                std::vector<R>& da = t.grad_buf(ia);
                std::vector<R> tmp(static_cast<size_t>(m) * k);
                if (shared_b) {
                    std::vector<R> tmp_all(static_cast<size_t>(batch) * m * k);
                    kernels::gemm_nt(g.data(), bv->data(), tmp_all.data(),
                                     static_cast<int>(batch * m), n, k, scratch);
                    for (size_t i = 0; i < tmp_all.size(); ++i) da[i] += tmp_all[i];
                } else {
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        kernels::gemm_nt(g.data() + bi * m * n, bv->data() + bi * k * n,
                                         tmp.data(), m, n, k, scratch);
                        R* dst = da.data() + bi * m * k;
                        for (size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
                    }
                }
            }
            if (ib >= 0) {
                std::vector<R>& db = t.grad_buf(ib);
                if (shared_b) {
                    std::vector<R> tmp(static_cast<size_t>(k) * n);
                    kernels::gemm_tn(av->data(), g.data(), tmp.data(),
                                     static_cast<int>(batch * m), k, n);
                    for (size_t i = 0; i < tmp.size(); ++i) db[i] += tmp[i];
                } else {
                    std::vector<R> tmp(static_cast<size_t>(k) * n);
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        kernels::gemm_tn(av->data() + bi * m * k, g.data() + bi * m * n,
                                         tmp.data(), m, k, n);
                        R* dst = db.data() + bi * k * n;
                        for (size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
                    }
                }
            }
        });
}

// ------------------------------------------------------------ transpose

template <class R>
Tensor<R> transpose_last2(Tape<R>& tape, const Tensor<R>& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2");
    const int m = a.dim(-2), n = a.dim(-1);
    int64_t batch = a.numel() / (static_cast<int64_t>(m) * n == 0 ? 1 : static_cast<int64_t>(m) * n);
    if (m == 0 || n == 0) batch = 0;
    Shape out_shape = a.shape;
    out_shape[out_shape.size() - 2] = n;
    out_shape[out_shape.size() - 1] = m;
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (int64_t bi = 0; bi < batch; ++bi)
        kernels::transpose2d(a.ptr() + bi * m * n, out.data() + bi * m * n, m, n);

    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, std::move(out_shape), std::move(out), {ia},
                               [ia, m, n, batch](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   std::vector<R>& da = t.grad_buf(ia);
                                   for (int64_t bi = 0; bi < batch; ++bi) {
                                       const R* gp = g.data() + bi * m * n;
                                       R* dp = da.data() + bi * m * n;
                                       for (int i = 0; i < n; ++i)
                                           for (int j = 0; j < m; ++j)
                                               dp[static_cast<size_t>(j) * n + i] +=
                                                   gp[static_cast<size_t>(i) * m + j];
                                   }
                               });
}

// ----------------------------------------------------------- elementwise

template <class R>
Tensor<R> add(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    detail::check_same_shape(a.shape, b.shape, "add");
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    int ia = tape.input_id(a), ib = tape.input_id(b);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia, ib},
                               [ia, ib](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia >= 0) {
                                       auto& da = t.grad_buf(ia);
                                       for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                                   }
                                   if (ib >= 0) {
                                       auto& db = t.grad_buf(ib);
                                       for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                                   }
                               });
}

template <class R>
Tensor<R> sub(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    detail::check_same_shape(a.shape, b.shape, "sub");
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    int ia = tape.input_id(a), ib = tape.input_id(b);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia, ib},
                               [ia, ib](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia >= 0) {
                                       auto& da = t.grad_buf(ia);
                                       for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                                   }
                                   if (ib >= 0) {
                                       auto& db = t.grad_buf(ib);
                                       for (size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
                                   }
                               });
}

template <class R>
Tensor<R> mul(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    detail::check_same_shape(a.shape, b.shape, "mul");
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    int ia = tape.input_id(a), ib = tape.input_id(b);
    auto av = a.data;
    auto bv = b.data;
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia, ib},
                               [ia, ib, av, bv](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia >= 0) {
                                       auto& da = t.grad_buf(ia);
                                       for (size_t i = 0; i < g.size(); ++i)
                                           da[i] += g[i] * (*bv)[i];
                                   }
                                   if (ib >= 0) {
                                       auto& db = t.grad_buf(ib);
                                       for (size_t i = 0; i < g.size(); ++i)
                                           db[i] += g[i] * (*av)[i];
                                   }
                               });
}

template <class R>
Tensor<R> scale(Tape<R>& tape, const Tensor<R>& a, R c) {
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia},
                               [ia, c](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
                               });
}

template <class R>
Tensor<R> add_const(Tape<R>& tape, const Tensor<R>& a, R c) {
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia},
                               [ia](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                               });
}

// a [.., d] + bias [d], broadcast over rows.
template <class R>
Tensor<R> add_bias(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& bias) {
    auto [rows, d] = detail::rows_cols(a.shape, "add_bias");
    if (bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeError("add_bias: bias " + shape_str(bias.shape) + " does not match last dim of " +
                         shape_str(a.shape));
    std::vector<R> out(static_cast<size_t>(a.numel()));
    const R* bp = bias.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const R* ap = a.ptr() + r * d;
        R* op = out.data() + r * d;
        for (int i = 0; i < d; ++i) op[i] = ap[i] + bp[i];
    }
    int ia = tape.input_id(a), ib = tape.input_id(bias);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia, ib},
                               [ia, ib, rows, d = d](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia >= 0) {
                                       auto& da = t.grad_buf(ia);
                                       for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                                   }
                                   if (ib >= 0) {
                                       auto& db = t.grad_buf(ib);
                                       for (int64_t r = 0; r < rows; ++r) {
                                           const R* gp = g.data() + r * d;
                                           for (int i = 0; i < d; ++i) db[static_cast<size_t>(i)] += gp[i];
                                       }
                                   }
                               });
}

// --------------------------------------------------------------- gelu

namespace detail {
template <class R>
inline R gelu_value(R x) {
    const R c = R(0.7978845608028654);  // sqrt(2/pi)
    const R a = R(0.044715);
    return R(0.5) * x * (R(1) + std::tanh(c * (x + a * x * x * x)));
}
template <class R>
inline R gelu_deriv(R x) {
    const R c = R(0.7978845608028654);
    const R a = R(0.044715);
    R u = c * (x + a * x * x * x);
    R th = std::tanh(u);
    return R(0.5) * (R(1) + th) + R(0.5) * x * (R(1) - th * th) * c * (R(1) + R(3) * a * x * x);
}
}  // namespace detail

template <class R>
Tensor<R> gelu(Tape<R>& tape, const Tensor<R>& a) {
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(a[i]);
    int ia = tape.input_id(a);
    auto av = a.data;
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia},
                               [ia, av](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (size_t i = 0; i < g.size(); ++i)
                                       da[i] += g[i] * detail::gelu_deriv((*av)[i]);
                               });
}

// -------------------------------------------------------------- softmax

template <class R>
Tensor<R> softmax_lastdim(Tape<R>& tape, const Tensor<R>& a) {
    auto [rows, d] = detail::rows_cols(a.shape, "softmax_lastdim");
    if (d < 1) throw ShapeError("softmax_lastdim: empty last dimension");
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (int64_t r = 0; r < rows; ++r) {
        const R* ap = a.ptr() + r * d;
        R* op = out.data() + r * d;
        R mx = ap[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, ap[i]);
        R sum = R(0);
        for (int i = 0; i < d; ++i) {
            op[i] = std::exp(ap[i] - mx);
            sum += op[i];
        }
        const R inv = R(1) / sum;
        for (int i = 0; i < d; ++i) op[i] *= inv;
    }
    int ia = tape.input_id(a);
    auto saved = std::make_shared<std::vector<R>>(out);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia},
                               [ia, saved, rows, d = d](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (int64_t r = 0; r < rows; ++r) {
                                       const R* y = saved->data() + r * d;
                                       const R* gp = g.data() + r * d;
                                       R dot = R(0);
                                       for (int i = 0; i < d; ++i) dot += gp[i] * y[i];
                                       R* dp = da.data() + r * d;
                                       for (int i = 0; i < d; ++i) dp[i] += y[i] * (gp[i] - dot);
                                   }
                               });
}

// Adds -inf above the diagonal of each [L, L] block; with softmax this
// zeroes attention to future positions exactly.
template <class R>
Tensor<R> causal_mask(Tape<R>& tape, const Tensor<R>& a) {
    if (a.rank() < 2 || a.dim(-1) != a.dim(-2))
        throw ShapeError("causal_mask: expected square last dims, got " + shape_str(a.shape));
    const int L = a.dim(-1);
    const int64_t batch = a.numel() / (static_cast<int64_t>(L) * L);
    std::vector<R> out(static_cast<size_t>(a.numel()));
    const R ninf = -std::numeric_limits<R>::infinity();
    for (int64_t bi = 0; bi < batch; ++bi) {
        const R* ap = a.ptr() + bi * L * L;
        R* op = out.data() + bi * L * L;
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                op[static_cast<size_t>(i) * L + j] = j <= i ? ap[static_cast<size_t>(i) * L + j] : ninf;
    }
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, a.shape, std::move(out), {ia},
                               [ia, L, batch](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (int64_t bi = 0; bi < batch; ++bi) {
                                       const R* gp = g.data() + bi * L * L;
                                       R* dp = da.data() + bi * L * L;
                                       for (int i = 0; i < L; ++i)
                                           for (int j = 0; j <= i; ++j)
                                               dp[static_cast<size_t>(i) * L + j] +=
                                                   gp[static_cast<size_t>(i) * L + j];
                                   }
                               });
}

// ------------------------------------------------------------ layer norm

template <class R>
Tensor<R> layer_norm(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& gain,
                     const Tensor<R>& bias, R eps) {
    auto [rows, d] = detail::rows_cols(a.shape, "layer_norm");
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    if (!(eps > R(0))) throw ConfigError("layer_norm: eps must be > 0");

    std::vector<R> out(static_cast<size_t>(a.numel()));
    auto xhat = std::make_shared<std::vector<R>>(static_cast<size_t>(a.numel()));
    auto inv_std = std::make_shared<std::vector<R>>(static_cast<size_t>(rows));
    const R* gp = gain.ptr();
    const R* bp = bias.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const R* ap = a.ptr() + r * d;
        R mean = R(0);
        for (int i = 0; i < d; ++i) mean += ap[i];
        mean /= R(d);
        R var = R(0);
        for (int i = 0; i < d; ++i) {
            R dev = ap[i] - mean;
            var += dev * dev;
        }
        var /= R(d);
        const R inv = R(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        R* xh = xhat->data() + r * d;
        R* op = out.data() + r * d;
        for (int i = 0; i < d; ++i) {
            xh[i] = (ap[i] - mean) * inv;
            op[i] = xh[i] * gp[i] + bp[i];
        }
    }

    int ia = tape.input_id(a), ig = tape.input_id(gain), ib = tape.input_id(bias);
    auto gv = gain.data;
    return detail::make_out<R>(
        tape, a.shape, std::move(out), {ia, ig, ib},
        [ia, ig, ib, xhat, inv_std, gv, rows, d = d](const std::vector<R>& g, Tape<R>& t) {
            for (int64_t r = 0; r < rows; ++r) {
                const R* gp = g.data() + r * d;
                const R* xh = xhat->data() + r * d;
                if (ig >= 0) {
                    auto& dg = t.grad_buf(ig);
                    for (int i = 0; i < d; ++i) dg[static_cast<size_t>(i)] += gp[i] * xh[i];
                }
                if (ib >= 0) {
                    auto& db = t.grad_buf(ib);
                    for (int i = 0; i < d; ++i) db[static_cast<size_t>(i)] += gp[i];
                }
                if (ia >= 0) {
                    auto& da = t.grad_buf(ia);
                    const R inv = (*inv_std)[static_cast<size_t>(r)];
                    R sum_dxh = R(0), sum_dxh_xh = R(0);
                    for (int i = 0; i < d; ++i) {
                        R dxh = gp[i] * (*gv)[static_cast<size_t>(i)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[i];
                    }
                    const R md = sum_dxh / R(d);
                    const R mdx = sum_dxh_xh / R(d);
                    R* dp = da.data() + r * d;
                    for (int i = 0; i < d; ++i) {
                        R dxh = gp[i] * (*gv)[static_cast<size_t>(i)];
                        dp[i] += inv * (dxh - md - xh[i] * mdx);
                    }
                }
            }
        });
}

// ------------------------------------------------------- head split/merge

// [1, N, H] -> [M, N, H/M]
template <class R>
Tensor<R> split_heads(Tape<R>& tape, const Tensor<R>& a, int heads) {
    if (a.rank() != 3 || a.dim(0) != 1)
        throw ShapeError("split_heads: expected [1, N, H], got " + shape_str(a.shape));
    const int n = a.dim(1), h = a.dim(2);
    if (heads < 1 || h % heads != 0)
        throw ShapeError("split_heads: hidden " + std::to_string(h) + " not divisible by heads " +
                         std::to_string(heads));
    const int dh = h / heads;
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (int m = 0; m < heads; ++m)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dh; ++j)
                out[(static_cast<size_t>(m) * n + i) * dh + j] =
                    a[static_cast<size_t>(i) * h + m * dh + j];
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, Shape{heads, n, dh}, std::move(out), {ia},
                               [ia, heads, n, dh, h](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (int m = 0; m < heads; ++m)
                                       for (int i = 0; i < n; ++i)
                                           for (int j = 0; j < dh; ++j)
                                               da[static_cast<size_t>(i) * h + m * dh + j] +=
                                                   g[(static_cast<size_t>(m) * n + i) * dh + j];
                               });
}

// [M, N, d] -> [1, N, M*d]
template <class R>
Tensor<R> merge_heads(Tape<R>& tape, const Tensor<R>& a) {
    if (a.rank() != 3) throw ShapeError("merge_heads: expected [M, N, d]");
    const int heads = a.dim(0), n = a.dim(1), dh = a.dim(2);
    const int h = heads * dh;
    std::vector<R> out(static_cast<size_t>(a.numel()));
    for (int m = 0; m < heads; ++m)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dh; ++j)
                out[static_cast<size_t>(i) * h + m * dh + j] =
                    a[(static_cast<size_t>(m) * n + i) * dh + j];
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, Shape{1, n, h}, std::move(out), {ia},
                               [ia, heads, n, dh, h](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (int m = 0; m < heads; ++m)
                                       for (int i = 0; i < n; ++i)
                                           for (int j = 0; j < dh; ++j)
                                               da[(static_cast<size_t>(m) * n + i) * dh + j] +=
                                                   g[static_cast<size_t>(i) * h + m * dh + j];
                               });
}

// ------------------------------------------------------------- pooling

// Mean pooling over row bins: output row i of each [*, N, D] block is the
// mean of input rows [floor(i*N/T), ceil((i+1)*N/T)). Identity at N == T;
// bins overlap or repeat rows when T does not divide N.
template <class R>
Tensor<R> pool_rows_mean(Tape<R>& tape, const Tensor<R>& a, int target) {
    if (a.rank() != 3) throw ShapeError("pool_rows_mean: expected [B, N, D]");
    if (target < 1) throw ShapeError("pool_rows_mean: target must be >= 1");
    const int b = a.dim(0), n = a.dim(1), d = a.dim(2);
    if (n < 1) throw ShapeError("pool_rows_mean: empty input sequence");

    std::vector<int> starts(static_cast<size_t>(target)), ends(static_cast<size_t>(target));
    for (int i = 0; i < target; ++i) {
        starts[static_cast<size_t>(i)] = static_cast<int>((static_cast<int64_t>(i) * n) / target);
        int64_t num = static_cast<int64_t>(i + 1) * n;
        ends[static_cast<size_t>(i)] = static_cast<int>((num + target - 1) / target);  // ceil
    }

    std::vector<R> out(static_cast<size_t>(b) * target * d);
    for (int bi = 0; bi < b; ++bi) {
        const R* base = a.ptr() + static_cast<size_t>(bi) * n * d;
        for (int i = 0; i < target; ++i) {
            const int s = starts[static_cast<size_t>(i)], e = ends[static_cast<size_t>(i)];
            R* op = out.data() + (static_cast<size_t>(bi) * target + i) * d;
            for (int j = 0; j < d; ++j) op[j] = R(0);
            for (int r = s; r < e; ++r) {
                const R* rp = base + static_cast<size_t>(r) * d;
                for (int j = 0; j < d; ++j) op[j] += rp[j];
            }
            const R inv = R(1) / R(e - s);
            for (int j = 0; j < d; ++j) op[j] *= inv;
        }
    }

    int ia = tape.input_id(a);
    return detail::make_out<R>(
        tape, Shape{b, target, d}, std::move(out), {ia},
        [ia, starts, ends, b, n, d, target](const std::vector<R>& g, Tape<R>& t) {
            if (ia < 0) return;
            auto& da = t.grad_buf(ia);
            for (int bi = 0; bi < b; ++bi) {
                for (int i = 0; i < target; ++i) {
                    const int s = starts[static_cast<size_t>(i)], e = ends[static_cast<size_t>(i)];
                    const R inv = R(1) / R(e - s);
                    const R* gp = g.data() + (static_cast<size_t>(bi) * target + i) * d;
                    for (int r = s; r < e; ++r) {
                        R* dp = da.data() + (static_cast<size_t>(bi) * n + r) * d;
                        for (int j = 0; j < d; ++j) dp[j] += gp[j] * inv;
                    }
                }
            }
        });
}

// ------------------------------------------------------- rows concat/slice

// [1, La, D] ++ [1, Lb, D] -> [1, La+Lb, D]; either side may be empty.
template <class R>
Tensor<R> concat_rows(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != 1 || b.dim(0) != 1)
        throw ShapeError("concat_rows: expected [1, L, D] operands");
    if (a.dim(2) != b.dim(2))
        throw ShapeError("concat_rows: last-dim mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    const int la = a.dim(1), lb = b.dim(1), d = a.dim(2);
    std::vector<R> out;
    out.reserve(static_cast<size_t>(la + lb) * d);
    out.insert(out.end(), a.data->begin(), a.data->end());
    out.insert(out.end(), b.data->begin(), b.data->end());
    int ia = tape.input_id(a), ib = tape.input_id(b);
    return detail::make_out<R>(tape, Shape{1, la + lb, d}, std::move(out), {ia, ib},
                               [ia, ib, la, lb, d](const std::vector<R>& g, Tape<R>& t) {
                                   const size_t na = static_cast<size_t>(la) * d;
                                   if (ia >= 0) {
                                       auto& da = t.grad_buf(ia);
                                       for (size_t i = 0; i < na; ++i) da[i] += g[i];
                                   }
                                   if (ib >= 0) {
                                       auto& db = t.grad_buf(ib);
                                       const size_t nb = static_cast<size_t>(lb) * d;
                                       for (size_t i = 0; i < nb; ++i) db[i] += g[na + i];
                                   }
                               });
}

// Rows [begin, end) of [1, L, D].
template <class R>
Tensor<R> slice_rows(Tape<R>& tape, const Tensor<R>& a, int begin, int end) {
    if (a.rank() != 3 || a.dim(0) != 1) throw ShapeError("slice_rows: expected [1, L, D]");
    const int l = a.dim(1), d = a.dim(2);
    if (begin < 0 || end > l || begin > end)
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") out of [0," + std::to_string(l) + ")");
    std::vector<R> out(a.data->begin() + static_cast<size_t>(begin) * d,
                       a.data->begin() + static_cast<size_t>(end) * d);
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, Shape{1, end - begin, d}, std::move(out), {ia},
                               [ia, begin, d](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   const size_t off = static_cast<size_t>(begin) * d;
                                   for (size_t i = 0; i < g.size(); ++i) da[off + i] += g[i];
                               });
}

// ------------------------------------------------------------ reductions

template <class R>
Tensor<R> sum_all(Tape<R>& tape, const Tensor<R>& a) {
    R s = R(0);
    for (const R& v : *a.data) s += v;
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, Shape{1}, {s}, {ia},
                               [ia](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (auto& v : da) v += g[0];
                               });
}

template <class R>
Tensor<R> mean_all(Tape<R>& tape, const Tensor<R>& a) {
    if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
    R s = R(0);
    for (const R& v : *a.data) s += v;
    const R inv = R(1) / R(a.numel());
    int ia = tape.input_id(a);
    return detail::make_out<R>(tape, Shape{1}, {s * inv}, {ia},
                               [ia, inv](const std::vector<R>& g, Tape<R>& t) {
                                   if (ia < 0) return;
                                   auto& da = t.grad_buf(ia);
                                   for (auto& v : da) v += g[0] * inv;
                               });
}

// --------------------------------------------------------------- losses

// Mean over all entries of (a - b)^2.
template <class R>
Tensor<R> mse(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    detail::check_same_shape(a.shape, b.shape, "mse");
    if (a.numel() == 0) throw ShapeError("mse: empty operands");
    R s = R(0);
    for (size_t i = 0; i < a.data->size(); ++i) {
        R dv = a[i] - b[i];
        s += dv * dv;
    }
    const R inv = R(1) / R(a.numel());
    int ia = tape.input_id(a), ib = tape.input_id(b);
    auto av = a.data;
    auto bv = b.data;
    return detail::make_out<R>(tape, Shape{1}, {s * inv}, {ia, ib},
                               [ia, ib, av, bv, inv](const std::vector<R>& g, Tape<R>& t) {
                                   const R c = R(2) * inv * g[0];
                                   if (ia >= 0) {
                                       auto& da = t.grad_buf(ia);
                                       for (size_t i = 0; i < av->size(); ++i)
                                           da[i] += c * ((*av)[i] - (*bv)[i]);
                                   }
                                   if (ib >= 0) {
                                       auto& db = t.grad_buf(ib);
                                       for (size_t i = 0; i < av->size(); ++i)
                                           db[i] -= c * ((*av)[i] - (*bv)[i]);
                                   }
                               });
}

// Mean over the rows of per-row cosine similarity between a and b.
// Rows where either side has zero norm contribute cosine 0.
template <class R>
Tensor<R> row_cosine_mean(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    detail::check_same_shape(a.shape, b.shape, "row_cosine_mean");
    auto [rows, d] = detail::rows_cols(a.shape, "row_cosine_mean");
    if (rows == 0 || d == 0) throw ShapeError("row_cosine_mean: empty operands");

    R total = R(0);
    auto stats = std::make_shared<std::vector<R>>(static_cast<size_t>(rows) * 3);  // dot, na, nb
    for (int64_t r = 0; r < rows; ++r) {
        const R* ap = a.ptr() + r * d;
        const R* bp = b.ptr() + r * d;
        R dot = R(0), na2 = R(0), nb2 = R(0);
        for (int i = 0; i < d; ++i) {
            dot += ap[i] * bp[i];
            na2 += ap[i] * ap[i];
            nb2 += bp[i] * bp[i];
        }
        R na = std::sqrt(na2), nb = std::sqrt(nb2);
        (*stats)[static_cast<size_t>(r) * 3 + 0] = dot;
        (*stats)[static_cast<size_t>(r) * 3 + 1] = na;
        (*stats)[static_cast<size_t>(r) * 3 + 2] = nb;
        if (na > R(0) && nb > R(0)) total += dot / (na * nb);
    }
    const R inv = R(1) / R(rows);

    int ia = tape.input_id(a), ib = tape.input_id(b);
    auto av = a.data;
    auto bv = b.data;
    return detail::make_out<R>(
        tape, Shape{1}, {total * inv}, {ia, ib},
        [ia, ib, av, bv, stats, rows, d = d, inv](const std::vector<R>& g, Tape<R>& t) {
            const R go = g[0] * inv;
            for (int64_t r = 0; r < rows; ++r) {
                const R dot = (*stats)[static_cast<size_t>(r) * 3 + 0];
                const R na = (*stats)[static_cast<size_t>(r) * 3 + 1];
                const R nb = (*stats)[static_cast<size_t>(r) * 3 + 2];
                if (!(na > R(0) && nb > R(0))) continue;
                const R* ap = av->data() + r * d;
                const R* bp = bv->data() + r * d;
                const R inv_ab = R(1) / (na * nb);
                if (ia >= 0) {
                    auto& da = t.grad_buf(ia);
                    R* dp = da.data() + r * d;
                    const R ca = dot / (na * na);
                    for (int i = 0; i < d; ++i) dp[i] += go * inv_ab * (bp[i] - ca * ap[i]);
                }
                if (ib >= 0) {
                    auto& db = t.grad_buf(ib);
                    R* dp = db.data() + r * d;
                    const R cb = dot / (nb * nb);
                    for (int i = 0; i < d; ++i) dp[i] += go * inv_ab * (ap[i] - cb * bp[i]);
                }
            }
        });
}

// Mean next-token cross entropy: logits [.., L, V] against L target ids.
template <class R>
Tensor<R> cross_entropy_mean(Tape<R>& tape, const Tensor<R>& logits, const std::vector<int>& ids) {
    auto [rows, v] = detail::rows_cols(logits.shape, "cross_entropy_mean");
    if (rows != static_cast<int64_t>(ids.size()))
        throw ShapeError("cross_entropy_mean: " + std::to_string(ids.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    for (int id : ids)
        if (id < 0 || id >= v) throw ValueError("cross_entropy_mean: target id out of range");

    auto probs = std::make_shared<std::vector<R>>(static_cast<size_t>(logits.numel()));
    R total = R(0);
    for (int64_t r = 0; r < rows; ++r) {
        const R* lp = logits.ptr() + r * v;
        R* pp = probs->data() + r * v;
        R mx = lp[0];
        for (int i = 1; i < v; ++i) mx = std::max(mx, lp[i]);
        R sum = R(0);
        for (int i = 0; i < v; ++i) {
            pp[i] = std::exp(lp[i] - mx);
            sum += pp[i];
        }
        const R inv = R(1) / sum;
        for (int i = 0; i < v; ++i) pp[i] *= inv;
        total += std::log(sum) + mx - lp[ids[static_cast<size_t>(r)]];
    }
    const R inv_rows = R(1) / R(rows);

    int il = tape.input_id(logits);
    return detail::make_out<R>(tape, Shape{1}, {total * inv_rows}, {il},
                               [il, probs, ids, rows, v, inv_rows](const std::vector<R>& g,
                                                                   Tape<R>& t) {
                                   if (il < 0) return;
                                   auto& dl = t.grad_buf(il);
                                   const R c = g[0] * inv_rows;
                                   for (int64_t r = 0; r < rows; ++r) {
                                       const R* pp = probs->data() + r * v;
                                       R* dp = dl.data() + r * v;
                                       for (int i = 0; i < v; ++i) dp[i] += c * pp[i];
                                       dp[ids[static_cast<size_t>(r)]] -= c;
                                   }
                               });
}

}  // namespace tinyalign::core
