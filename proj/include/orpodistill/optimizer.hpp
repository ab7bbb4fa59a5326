#pragma once

#include <cstdint>
#include <vector>

#include "orpodistill/arch.hpp"

namespace orpod::lm {

// Adam with bias correction. Deterministic: a fixed (theta, grads, state)
// always produces the same update.
struct AdamState {
  std::vector<double> m, v;
  int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::vector<double>& theta, const std::vector<double>& grads,
               AdamState& state, double eta);

inline void optimizer_step(LmParams& params, const std::vector<double>& grads,
                           AdamState& state, double eta) {
  adam_step(params.theta, grads, state, eta);
}

}  // namespace orpod::lm
