#pragma once

#include <functional>
#include <string>
#include <vector>

#include "orpodistill/arch.hpp"
#include "orpodistill/mat.hpp"

namespace orpod::lm {

// Reverse-mode autodiff tape over matrix-valued nodes. A tape references
// one parameter vector; backward() accumulates into param_grad(). Ops only
// reference earlier nodes, so insertion order is a topological order.
class Tape {
 public:
  explicit Tape(const LmParams& params);

  // --- sequence / matrix ops ---
  int embed(const std::vector<int>& tokens);  // wte[token] + wpe[pos]
  int rmsnorm(int x, const std::string& gain_name);
  int matmul(int x, const std::string& weight_name);  // value(x) · W
  int add(int a, int b);
  int mul(int a, int b);
  int gelu(int x);
  int sigmoid(int x);
  int causal_attention(int q, int k, int v, int n_head);
  int window_concat(int x, int window);
  int prefix_mean(int x);

  // Mean log-softmax probability of `targets` read at logits rows
  // [first_row, first_row + targets.size()). Scalar node; optionally
  // reports the per-target log-probs.
  int mean_log_softmax(int logits, std::vector<int> targets, int first_row,
                       std::vector<double>* per_token_out = nullptr);

  // --- scalar (1×1) ops ---
  int constant(double v);
  int clamp_max(int x, double cap);
  int log_odds(int x);       // x is a log-probability node, value < 0
  int sub(int a, int b);
  int softplus_neg(int x);   // softplus(-x) = -log(sigmoid(x))
  int add_scaled(int a, double lam, int b);  // a + lam·b
  int scale(int x, double s);
  int param_sq_norm();       // Σ θ²

  double scalar(int node) const;
  const Mat& value(int node) const;
  void backward(int node);  // seeds d(node)=1, runs the whole tape
  const std::vector<double>& param_grad() const { return pgrad_; }
  const LmParams& params() const { return params_; }

 private:
  struct Node {
    Mat val;
    Mat grad;  // allocated lazily during backward
    std::function<void()> back;
  };

  int push(Mat val, std::function<void()> back = nullptr);
  Mat& grad_of(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

  const LmParams& params_;
  std::vector<Node> nodes_;
  std::vector<double> pgrad_;
};

}  // namespace orpod::lm
