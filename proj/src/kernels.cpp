#include "orpodistill/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>

#include "orpodistill/parallel.hpp"

namespace orpod {

namespace par {

namespace {
int g_threads = 0;

int resolve_threads() {
  int hw = omp_get_max_threads();
  if (const char* env = std::getenv("ORPO_DISTILL_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return std::min(v, hw);
  }
  return hw;
}
}  // namespace

int max_threads() {
  if (g_threads == 0) g_threads = resolve_threads();
  return g_threads;
}

void set_max_threads(int n) { g_threads = n; }

}  // namespace par

namespace kernels {

namespace {

// Per-row workers shared by the serial and OpenMP variants. Keeping the
// inner loops in one place guarantees both variants execute the same
// floating-point operations in the same order.
void nn_row(const double* Arow, const double* B, double* Crow, int k, int n,
            bool accumulate) {
  if (!accumulate) std::fill(Crow, Crow + n, 0.0);
  for (int kk = 0; kk < k; ++kk) {
    const double a = Arow[kk];
    const double* Brow = B + static_cast<size_t>(kk) * n;
    for (int j = 0; j < n; ++j) Crow[j] += a * Brow[j];
  }
}

void nt_row(const double* Arow, const double* B, double* Crow, int k, int n,
            bool accumulate) {
  for (int j = 0; j < n; ++j) {
    const double* Brow = B + static_cast<size_t>(j) * k;
    double acc = 0.0;
    for (int kk = 0; kk < k; ++kk) acc += Arow[kk] * Brow[kk];
    if (accumulate) {
      Crow[j] += acc;
    } else {
      Crow[j] = acc;
    }
  }
}

// Row r of C = AᵀB gathers column r of A against all rows of B.
void tn_row(const double* A, const double* B, double* Crow, int r, int m,
            int k, int n, bool accumulate) {
  if (!accumulate) std::fill(Crow, Crow + n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double a = A[static_cast<size_t>(i) * k + r];
    const double* Brow = B + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) Crow[j] += a * Brow[j];
  }
}

bool use_omp(long long work) {
  return par::max_threads() > 1 && work > 1 << 16;
}

}  // namespace

namespace serial {

void matmul_nn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    nn_row(A + static_cast<size_t>(i) * k, B, C + static_cast<size_t>(i) * n,
           k, n, accumulate);
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    nt_row(A + static_cast<size_t>(i) * k, B, C + static_cast<size_t>(i) * n,
           k, n, accumulate);
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
  for (int r = 0; r < k; ++r)
    tn_row(A, B, C + static_cast<size_t>(r) * n, r, m, k, n, accumulate);
}

}  // namespace serial

namespace omp {

void matmul_nn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
#pragma omp parallel for schedule(static) num_threads(par::max_threads())
  for (int i = 0; i < m; ++i)
    nn_row(A + static_cast<size_t>(i) * k, B, C + static_cast<size_t>(i) * n,
           k, n, accumulate);
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
#pragma omp parallel for schedule(static) num_threads(par::max_threads())
  for (int i = 0; i < m; ++i)
    nt_row(A + static_cast<size_t>(i) * k, B, C + static_cast<size_t>(i) * n,
           k, n, accumulate);
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
#pragma omp parallel for schedule(static) num_threads(par::max_threads())
  for (int r = 0; r < k; ++r)
    tn_row(A, B, C + static_cast<size_t>(r) * n, r, m, k, n, accumulate);
}

}  // namespace omp

void matmul_nn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
  if (use_omp(1LL * m * k * n)) {
    omp::matmul_nn(A, B, C, m, k, n, accumulate);
  } else {
    serial::matmul_nn(A, B, C, m, k, n, accumulate);
  }
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
  if (use_omp(1LL * m * k * n)) {
    omp::matmul_nt(A, B, C, m, k, n, accumulate);
  } else {
    serial::matmul_nt(A, B, C, m, k, n, accumulate);
  }
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate) {
  if (use_omp(1LL * m * k * n)) {
    omp::matmul_tn(A, B, C, m, k, n, accumulate);
  } else {
    serial::matmul_tn(A, B, C, m, k, n, accumulate);
  }
}

}  // namespace kernels
}  // namespace orpod
