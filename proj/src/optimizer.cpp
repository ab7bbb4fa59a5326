#include "orpodistill/optimizer.hpp"

#include <cmath>

#include "orpodistill/error.hpp"

namespace orpod::lm {

void adam_step(std::vector<double>& theta, const std::vector<double>& grads,
               AdamState& state, double eta) {
  if (theta.size() != grads.size())
    throw Error(ErrorKind::ShapeMismatch,
                "grads length " + std::to_string(grads.size()) +
                    " vs theta " + std::to_string(theta.size()));
  if (state.m.empty()) state = AdamState(theta.size());
  if (state.m.size() != theta.size())
    throw Error(ErrorKind::ShapeMismatch, "optimizer state length mismatch");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] =
        state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    theta[i] -= eta * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace orpod::lm
