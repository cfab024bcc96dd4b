#pragma once

// Central finite-difference verification of analytic gradients. Runs at
// 64-bit precision; the 1e-4 tolerance used throughout the tests is not
// reachable at 32-bit.

#include <functional>
#include <vector>

#include "tinyalign/tape.hpp"

namespace tinyalign::core {

struct FiniteDiffOptions {
    double h = 1e-4;
    // When >= 0, probe only this many randomly sampled coordinates per
    // parameter instead of all of them.
    int max_coords_per_tensor = -1;
    uint64_t seed = 0;
};

// build_loss must rebuild the scalar loss from the current parameter
// values on the given tape. Returns the max over all probed coordinates of
// |analytic - central_difference| / max(|analytic|, 1e-8).
inline double finite_diff_check(const std::function<Tensor<double>(Tape<double>&)>& build_loss,
                                const std::vector<Tensor<double>*>& params,
                                FiniteDiffOptions opt = {}) {
    if (opt.h < 1e-6 || opt.h > 1e-3) throw ConfigError("finite_diff_check: h outside [1e-6, 1e-3]");

    Tape<double> tape;
    Tensor<double> loss = build_loss(tape);
    if (loss.numel() != 1) throw ContractError("finite_diff_check: loss must be scalar");
    GradMap<double> grads = tape.backward(loss);

    auto eval = [&]() {
        Tape<double> t(false);
        Tensor<double> l = build_loss(t);
        return (*l.data)[0];
    };

    SeededRng rng(opt.seed);
    double max_rel = 0.0;
    for (Tensor<double>* p : params) {
        Tensor<double> g = grads.of(*p);
        const int64_t n = p->numel();
        std::vector<int64_t> coords;
        if (opt.max_coords_per_tensor >= 0 && opt.max_coords_per_tensor < n) {
            for (int i = 0; i < opt.max_coords_per_tensor; ++i)
                coords.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
        } else {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        }
        for (int64_t c : coords) {
            double& slot = (*p->data)[static_cast<size_t>(c)];
            const double orig = slot;
            slot = orig + opt.h;
            const double up = eval();
            slot = orig - opt.h;
            const double down = eval();
            slot = orig;
            const double numeric = (up - down) / (2.0 * opt.h);
            const double analytic = g[static_cast<size_t>(c)];
            const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace tinyalign::core
