#pragma once

// Low-level compute kernels. Every kernel has a serial reference variant
// and an OpenMP variant; the parallel variant splits work only across
// independent output elements and keeps the per-element accumulation
// order of the serial code, so both produce bit-identical results for
// any thread count.

#include <cstdint>
#include <cstdlib>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace tinyalign::kernels {

inline int max_threads() {
#if defined(_OPENMP)
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#if defined(_OPENMP)
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

// Applies the TINY_ALIGN_THREADS cap if set.
inline void apply_thread_env() {
    if (const char* env = std::getenv("TINY_ALIGN_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) set_threads(n);
    }
}

// ------------------------------------------------------------ gemm, serial

// C[m,n] = sum_k A[m,k] * B[k,n]; accumulation in increasing k.
template <class R>
void gemm_nn_serial(const R* a, const R* b, R* c, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        R* crow = c + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) crow[n] = R(0);
        const R* arow = a + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const R av = arow[k];
            const R* brow = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

// C[k,n] = sum_m A[m,k] * B[m,n]; accumulation in increasing m.
template <class R>
void gemm_tn_serial(const R* a, const R* b, R* c, int M, int K, int N) {
    for (size_t i = 0; i < static_cast<size_t>(K) * N; ++i) c[i] = R(0);
    for (int m = 0; m < M; ++m) {
        const R* arow = a + static_cast<size_t>(m) * K;
        const R* brow = b + static_cast<size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const R av = arow[k];
            R* crow = c + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

template <class R>
void transpose2d_serial(const R* a, R* out, int M, int N) {
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
            out[static_cast<size_t>(n) * M + m] = a[static_cast<size_t>(m) * N + n];
}

// ------------------------------------------------------------ gemm, openmp

template <class R>
void gemm_nn(const R* a, const R* b, R* c, int M, int K, int N) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m) {
        R* crow = c + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) crow[n] = R(0);
        const R* arow = a + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const R av = arow[k];
            const R* brow = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

// tn splits over output rows k; each thread re-walks the m loop for its
// own k range, so per-element accumulation order matches the serial twin.
template <class R>
void gemm_tn(const R* a, const R* b, R* c, int M, int K, int N) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < K; ++k) {
        R* crow = c + static_cast<size_t>(k) * N;
        for (int n = 0; n < N; ++n) crow[n] = R(0);
        for (int m = 0; m < M; ++m) {
            const R av = a[static_cast<size_t>(m) * K + k];
            const R* brow = b + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

template <class R>
void transpose2d(const R* a, R* out, int M, int N) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
            out[static_cast<size_t>(n) * M + m] = a[static_cast<size_t>(m) * N + n];
}

// C = A * B^T, computed by materializing B^T and reusing gemm_nn. The
// dot-product form defeats vectorization on the k reduction; this route
// keeps the same per-element accumulation order and runs ~3x faster.
template <class R>
void gemm_nt(const R* a, const R* b, R* c, int M, int K, int N, std::vector<R>& scratch) {
    scratch.resize(static_cast<size_t>(K) * N);
    transpose2d(b, scratch.data(), N, K);
    gemm_nn(a, scratch.data(), c, M, K, N);
}

template <class R>
void gemm_nt_serial(const R* a, const R* b, R* c, int M, int K, int N, std::vector<R>& scratch) {
    scratch.resize(static_cast<size_t>(K) * N);
    transpose2d_serial(b, scratch.data(), N, K);
    gemm_nn_serial(a, scratch.data(), c, M, K, N);
}

}  // namespace tinyalign::kernels
