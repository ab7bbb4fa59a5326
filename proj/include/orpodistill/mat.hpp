#pragma once

#include <cassert>
#include <vector>

namespace orpod {

// Row-major dense matrix of doubles. The whole project runs in 64-bit
// floating point so finite-difference gradient checks stay tight.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const {
    return a.data() + static_cast<size_t>(i) * cols;
  }

  double& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const {
    return a[static_cast<size_t>(i) * cols + j];
  }

  size_t size() const { return a.size(); }
  bool empty() const { return a.empty(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

}  // namespace orpod
