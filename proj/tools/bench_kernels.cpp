// Benchmark of the serial reference kernels against the OpenMP variants,
// plus a model-level forward/backward timing at the default projector
// configuration. Verifies bit-equality while timing.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "tinyalign/bridgeformer.hpp"
#include "tinyalign/embedlink.hpp"
#include "tinyalign/kernels.hpp"

using namespace tinyalign;
namespace tk = tinyalign::kernels;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<float> random_vec(size_t n, SeededRng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
}

template <class F>
double time_gflops(F&& fn, double flops, int reps) {
    fn();  // warm up
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    return flops * reps / seconds_since(t0) / 1e9;
}

void bench_gemm(int m, int k, int n) {
    SeededRng rng(1);
    auto a = random_vec(static_cast<size_t>(m) * k, rng);
    auto b = random_vec(static_cast<size_t>(k) * n, rng);
    auto bt = random_vec(static_cast<size_t>(n) * k, rng);
    std::vector<float> c_ser(static_cast<size_t>(m) * n), c_par(c_ser.size());
    std::vector<float> scratch1, scratch2;
    const double flops = 2.0 * m * k * n;
    const int reps = std::max(1, static_cast<int>(2e9 / flops));

    const double nn_ser =
        time_gflops([&] { tk::gemm_nn_serial(a.data(), b.data(), c_ser.data(), m, k, n); }, flops, reps);
    const double nn_par =
        time_gflops([&] { tk::gemm_nn(a.data(), b.data(), c_par.data(), m, k, n); }, flops, reps);
    const bool nn_equal = std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * 4) == 0;

    const double nt_ser = time_gflops(
        [&] { tk::gemm_nt_serial(a.data(), bt.data(), c_ser.data(), m, k, n, scratch1); }, flops, reps);
    const double nt_par = time_gflops(
        [&] { tk::gemm_nt(a.data(), bt.data(), c_par.data(), m, k, n, scratch2); }, flops, reps);
    const bool nt_equal = std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * 4) == 0;

    std::printf("gemm %4dx%4dx%4d  nn %7.2f -> %7.2f GF/s  nt %7.2f -> %7.2f GF/s  %s\n", m, k, n,
                nn_ser, nn_par, nt_ser, nt_par,
                nn_equal && nt_equal ? "bit-equal" : "MISMATCH");
}

void bench_model() {
    BridgeFormerConfig cfg;  // paper defaults, d_l shrunk as in the experiments
    cfg.d_l = 64;
    cfg.seed = 3;
    auto model = BridgeFormer<float>::init(cfg);
    SeededRng rng(5);
    auto features = core::Tensor<float>::zeros({1, 30, cfg.d_a});
    for (auto& v : *features.data) v = static_cast<float>(rng.uniform(-1, 1));
    auto table = EmbeddingTable::random_normalized(40, cfg.d_l, 7);
    auto target = embed_text<float>(table, cast_tokens({2, 3, 4, 5}, cfg.token_cast, 0));

    auto t0 = Clock::now();
    int fwd = 0;
    while (seconds_since(t0) < 1.0) {
        core::Tape<float> tape(false);
        (void)model.forward(tape, features);
        ++fwd;
    }
    const double fwd_ms = seconds_since(t0) * 1000.0 / fwd;

    AdamW<float> opt;
    t0 = Clock::now();
    int steps = 0;
    while (seconds_since(t0) < 2.0) {
        TrainPair<float> pair{features, cast_tokens({2, 3, 4, 5}, cfg.token_cast, 0)};
        (void)train_step(model, pair, table, LossWeights{}, opt, 1e-3);
        ++steps;
    }
    const double step_ms = seconds_since(t0) * 1000.0 / steps;
    std::printf("model N=30 default config: forward %.2f ms, train step %.2f ms (%d threads)\n",
                fwd_ms, step_ms, tk::max_threads());
}

}  // namespace

int main() {
    tk::apply_thread_env();
    std::printf("threads: %d\n", tk::max_threads());
    bench_gemm(30, 768, 256);
    bench_gemm(30, 256, 256);
    bench_gemm(30, 256, 1024);
    bench_gemm(256, 256, 256);
    bench_gemm(1500, 512, 256);
    bench_model();
    return 0;
}
