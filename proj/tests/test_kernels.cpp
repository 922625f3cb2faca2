#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dlrgrid/kernels.hpp"

namespace k = dlrgrid::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Odd sizes exercise the scalar tails after the 4-wide loops.
const std::size_t kSizes[] = {1, 3, 4, 7, 8, 13, 33};

}  // namespace

TEST(Kernels, ScalarGemmMatchesNaiveLoops) {
  std::mt19937_64 rng(3);
  const auto& s = k::scalar_table();
  for (std::size_t m : {1, 5}) {
    for (std::size_t n : {2, 9}) {
      for (std::size_t kk : {1, 6}) {
        auto a = random_vec(m * kk, rng);
        auto b = random_vec(kk * n, rng);
        std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
        s.gemm_nn(m, n, kk, a.data(), b.data(), c.data(), false);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < kk; ++p) ref[i * n + j] += a[i * kk + p] * b[p * n + j];
        EXPECT_LT(max_diff(c, ref), 1e-14);
      }
    }
  }
}

TEST(Kernels, Avx2MatchesScalar) {
  const k::KernelTable* v = k::avx2_table();
  if (v == nullptr) GTEST_SKIP() << "AVX2 not available";
  const auto& s = k::scalar_table();
  std::mt19937_64 rng(11);
  for (std::size_t m : kSizes) {
    for (std::size_t n : kSizes) {
      const std::size_t kk = (m + n) % 9 + 1;
      auto a = random_vec(m * kk, rng);
      auto b = random_vec(kk * n, rng);
      auto c0 = random_vec(m * n, rng);
      for (bool acc : {false, true}) {
        auto cs = c0, cv = c0;
        s.gemm_nn(m, n, kk, a.data(), b.data(), cs.data(), acc);
        v->gemm_nn(m, n, kk, a.data(), b.data(), cv.data(), acc);
        EXPECT_LT(max_diff(cs, cv), 1e-12) << "nn " << m << "x" << n;
      }
      // gemm_tn: A is m x kk, B is m x n, C is kk x n.
      auto bt = random_vec(m * n, rng);
      std::vector<double> ts(kk * n), tv(kk * n);
      s.gemm_tn(m, n, kk, a.data(), bt.data(), ts.data(), false);
      v->gemm_tn(m, n, kk, a.data(), bt.data(), tv.data(), false);
      EXPECT_LT(max_diff(ts, tv), 1e-12) << "tn " << m << "x" << n;
      // gemm_nt: A is m x n, B is kk x n, C is m x kk.
      auto an = random_vec(m * n, rng);
      auto bn = random_vec(kk * n, rng);
      std::vector<double> ns(m * kk), nv(m * kk);
      s.gemm_nt(m, n, kk, an.data(), bn.data(), ns.data(), false);
      v->gemm_nt(m, n, kk, an.data(), bn.data(), nv.data(), false);
      EXPECT_LT(max_diff(ns, nv), 1e-12) << "nt " << m << "x" << n;
    }
  }
  for (std::size_t n : kSizes) {
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);
    auto ys = y, yv = y;
    s.axpy(n, 0.7, x.data(), ys.data());
    v->axpy(n, 0.7, x.data(), yv.data());
    EXPECT_LT(max_diff(ys, yv), 1e-15);
    EXPECT_NEAR(s.dot(n, x.data(), y.data()), v->dot(n, x.data(), y.data()), 1e-13);
    ys = y;
    yv = y;
    s.hadamard_acc(n, x.data(), y.data(), ys.data());
    v->hadamard_acc(n, x.data(), y.data(), yv.data());
    EXPECT_LT(max_diff(ys, yv), 1e-15);
    s.hadamard(n, x.data(), y.data(), ys.data());
    v->hadamard(n, x.data(), y.data(), yv.data());
    EXPECT_LT(max_diff(ys, yv), 1e-15);
  }
}

TEST(Kernels, DispatchCanBeForced) {
  const k::Isa before = k::active_isa();
  k::set_active_isa(k::Isa::Scalar);
  EXPECT_EQ(k::active_isa(), k::Isa::Scalar);
  EXPECT_EQ(&k::active(), &k::scalar_table());
  if (k::isa_available(k::Isa::Avx2)) {
    k::set_active_isa(k::Isa::Avx2);
    EXPECT_EQ(&k::active(), k::avx2_table());
  } else {
    EXPECT_ANY_THROW(k::set_active_isa(k::Isa::Avx2));
  }
  k::set_active_isa(before);
  EXPECT_EQ(k::isa_name(k::Isa::Scalar), "scalar");
}
