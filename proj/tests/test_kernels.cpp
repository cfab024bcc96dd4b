#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tinyalign/common.hpp"
#include "tinyalign/kernels.hpp"
#include "test_support.hpp"

#include <vector>

using namespace tinyalign;
namespace tk = tinyalign::kernels;

namespace {

template <class R>
std::vector<R> random_vec(size_t n, SeededRng& rng) {
    std::vector<R> v(n);
    for (auto& x : v) x = static_cast<R>(rng.uniform(-1.0, 1.0));
    return v;
}

}  // namespace

TEST_CASE("gemm_nn matches the openmp variant bit for bit") {
    SeededRng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        int m = rng.range_int(1, 40), k = rng.range_int(1, 60), n = rng.range_int(1, 50);
        auto a = random_vec<float>(static_cast<size_t>(m) * k, rng);
        auto b = random_vec<float>(static_cast<size_t>(k) * n, rng);
        std::vector<float> c_ser(static_cast<size_t>(m) * n), c_par(static_cast<size_t>(m) * n);
        tk::gemm_nn_serial(a.data(), b.data(), c_ser.data(), m, k, n);
        tk::gemm_nn(a.data(), b.data(), c_par.data(), m, k, n);
        REQUIRE(std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("gemm_tn matches the openmp variant bit for bit") {
    SeededRng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        int m = rng.range_int(1, 40), k = rng.range_int(1, 60), n = rng.range_int(1, 50);
        auto a = random_vec<float>(static_cast<size_t>(m) * k, rng);
        auto b = random_vec<float>(static_cast<size_t>(m) * n, rng);
        std::vector<float> c_ser(static_cast<size_t>(k) * n), c_par(static_cast<size_t>(k) * n);
        tk::gemm_tn_serial(a.data(), b.data(), c_ser.data(), m, k, n);
        tk::gemm_tn(a.data(), b.data(), c_par.data(), m, k, n);
        REQUIRE(std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("gemm_nt matches the openmp variant bit for bit") {
    SeededRng rng(9);
    std::vector<float> s1, s2;
    for (int trial = 0; trial < 20; ++trial) {
        int m = rng.range_int(1, 40), k = rng.range_int(1, 60), n = rng.range_int(1, 50);
        auto a = random_vec<float>(static_cast<size_t>(m) * k, rng);
        auto b = random_vec<float>(static_cast<size_t>(n) * k, rng);
        std::vector<float> c_ser(static_cast<size_t>(m) * n), c_par(static_cast<size_t>(m) * n);
        tk::gemm_nt_serial(a.data(), b.data(), c_ser.data(), m, k, n, s1);
        tk::gemm_nt(a.data(), b.data(), c_par.data(), m, k, n, s2);
        REQUIRE(std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("gemm_nn agrees with the naive triple-loop oracle") {
    SeededRng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        int m = rng.range_int(1, 16), k = rng.range_int(1, 24), n = rng.range_int(1, 16);
        auto a = random_vec<double>(static_cast<size_t>(m) * k, rng);
        auto b = random_vec<double>(static_cast<size_t>(k) * n, rng);
        std::vector<double> c(static_cast<size_t>(m) * n);
        tk::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
        auto oracle = test_support::matmul_oracle(a, b, m, k, n);
        for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }
}

TEST_CASE("gemm forms are consistent with explicit transposes") {
    SeededRng rng(11);
    int m = 9, k = 13, n = 7;
    auto a = random_vec<double>(static_cast<size_t>(m) * k, rng);
    auto b = random_vec<double>(static_cast<size_t>(n) * k, rng);

    // nt: C = A * B^T.
    std::vector<double> bt(static_cast<size_t>(k) * n);
    tk::transpose2d(b.data(), bt.data(), n, k);
    auto expect = test_support::matmul_oracle(a, bt, m, k, n);
    std::vector<double> c(static_cast<size_t>(m) * n), scratch;
    tk::gemm_nt(a.data(), b.data(), c.data(), m, k, n, scratch);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    // tn: C = A^T * B with A as [m, k], B as [m, n].
    auto b2 = random_vec<double>(static_cast<size_t>(m) * n, rng);
    std::vector<double> at(static_cast<size_t>(k) * m);
    tk::transpose2d(a.data(), at.data(), m, k);
    auto expect2 = test_support::matmul_oracle(at, b2, k, m, n);
    std::vector<double> c2(static_cast<size_t>(k) * n);
    tk::gemm_tn(a.data(), b2.data(), c2.data(), m, k, n);
    for (size_t i = 0; i < c2.size(); ++i) CHECK(c2[i] == doctest::Approx(expect2[i]).epsilon(1e-12));
}

TEST_CASE("transpose round trip is the identity") {
    SeededRng rng(12);
    int m = 17, n = 23;
    auto a = random_vec<float>(static_cast<size_t>(m) * n, rng);
    std::vector<float> t(a.size()), back(a.size());
    tk::transpose2d(a.data(), t.data(), m, n);
    tk::transpose2d(t.data(), back.data(), n, m);
    REQUIRE(std::memcmp(a.data(), back.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("kernels are deterministic across repeated calls") {
    SeededRng rng(13);
    int m = 33, k = 47, n = 29;
    auto a = random_vec<float>(static_cast<size_t>(m) * k, rng);
    auto b = random_vec<float>(static_cast<size_t>(k) * n, rng);
    std::vector<float> c1(static_cast<size_t>(m) * n), c2(static_cast<size_t>(m) * n);
    tk::gemm_nn(a.data(), b.data(), c1.data(), m, k, n);
    tk::gemm_nn(a.data(), b.data(), c2.data(), m, k, n);
    REQUIRE(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
}
