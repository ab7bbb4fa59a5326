#pragma once

// Dense matmul kernels in three transpose layouts, each with a serial
// reference implementation and an OpenMP variant. Both variants call the
// same per-row helper, so they produce bitwise-identical results; the
// tests assert that and the orpo-bench target compares their throughput.
//
//   nn: C = A(m×k) · B(k×n)
//   nt: C = A(m×k) · B(n×k)ᵀ
//   tn: C = A(m×k)ᵀ · B(m×n)   (C is k×n)
//
// `accumulate` selects C += result instead of C = result.

namespace orpod::kernels {

namespace serial {
void matmul_nn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
}  // namespace serial

namespace omp {
void matmul_nn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
}  // namespace omp

// Dispatching entry points: pick the OpenMP variant when the work is large
// enough and more than one thread is configured.
void matmul_nn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C, int m, int k,
               int n, bool accumulate = false);

}  // namespace orpod::kernels
