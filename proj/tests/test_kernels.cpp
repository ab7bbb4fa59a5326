#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <tuple>
#include <vector>

#include "orpodistill/kernels.hpp"
#include "orpodistill/parallel.hpp"
#include "orpodistill/rng.hpp"

using namespace orpod;

namespace {
std::vector<double> random_vec(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}
}  // namespace

TEST_CASE("serial and omp kernels agree bitwise") {
  par::set_max_threads(4);
  for (auto [m, k, n] : {std::tuple<int, int, int>{7, 13, 5},
                         {1, 64, 32},
                         {33, 17, 33},
                         {128, 64, 80}}) {
    auto a = random_vec(size_t(m) * k, 1);
    auto b_nn = random_vec(size_t(k) * n, 2);
    auto b_nt = random_vec(size_t(n) * k, 3);
    auto b_tn = random_vec(size_t(m) * n, 4);

    std::vector<double> cs(size_t(m) * n), cp(size_t(m) * n);
    kernels::serial::matmul_nn(a.data(), b_nn.data(), cs.data(), m, k, n);
    kernels::omp::matmul_nn(a.data(), b_nn.data(), cp.data(), m, k, n);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * 8) == 0);

    kernels::serial::matmul_nt(a.data(), b_nt.data(), cs.data(), m, k, n);
    kernels::omp::matmul_nt(a.data(), b_nt.data(), cp.data(), m, k, n);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * 8) == 0);

    // tn: A is (m x k), C = A^T B is (k x n) with B (m x n)
    std::vector<double> ds(size_t(k) * n), dp(size_t(k) * n);
    kernels::serial::matmul_tn(a.data(), b_tn.data(), ds.data(), m, k, n);
    kernels::omp::matmul_tn(a.data(), b_tn.data(), dp.data(), m, k, n);
    CHECK(std::memcmp(ds.data(), dp.data(), ds.size() * 8) == 0);
  }
  par::set_max_threads(0);
}

TEST_CASE("accumulate adds on top of existing values") {
  const int m = 5, k = 9, n = 4;
  auto a = random_vec(size_t(m) * k, 10);
  auto b = random_vec(size_t(k) * n, 11);
  std::vector<double> base = random_vec(size_t(m) * n, 12);

  std::vector<double> once(size_t(m) * n);
  kernels::matmul_nn(a.data(), b.data(), once.data(), m, k, n);

  std::vector<double> acc = base;
  kernels::matmul_nn(a.data(), b.data(), acc.data(), m, k, n,
                     /*accumulate=*/true);
  for (size_t i = 0; i < acc.size(); ++i)
    CHECK(acc[i] == doctest::Approx(base[i] + once[i]).epsilon(1e-12));
}

TEST_CASE("matmul correctness against naive triple loop") {
  const int m = 6, k = 11, n = 7;
  auto a = random_vec(size_t(m) * k, 20);
  auto b = random_vec(size_t(k) * n, 21);
  std::vector<double> c(size_t(m) * n);
  kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      CHECK(c[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
    }

  auto bt = random_vec(size_t(n) * k, 22);
  kernels::matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += a[i * k + kk] * bt[j * k + kk];
      CHECK(c[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
    }

  auto b2 = random_vec(size_t(m) * n, 23);
  std::vector<double> d(size_t(k) * n);
  kernels::matmul_tn(a.data(), b2.data(), d.data(), m, k, n);
  for (int r = 0; r < k; ++r)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < m; ++i) acc += a[i * k + r] * b2[i * n + j];
      CHECK(d[r * n + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("thread cap override") {
  par::set_max_threads(1);
  CHECK(par::max_threads() == 1);
  par::set_max_threads(3);
  CHECK(par::max_threads() == 3);
  par::set_max_threads(0);
  CHECK(par::max_threads() >= 1);
}
