#include "orpodistill/tape.hpp"

#include <algorithm>
#include <cmath>

#include "orpodistill/error.hpp"
#include "orpodistill/kernels.hpp"
#include "orpodistill/orpo.hpp"

namespace orpod::lm {

Tape::Tape(const LmParams& params)
    : params_(params), pgrad_(params.theta.size(), 0.0) {}

int Tape::push(Mat val, std::function<void()> back) {
  nodes_.push_back(Node{std::move(val), Mat{}, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Mat(n.val.rows, n.val.cols);
  return n.grad;
}

const Mat& Tape::value(int node) const { return nodes_[node].val; }

double Tape::scalar(int node) const {
  const Mat& m = nodes_[node].val;
  assert(m.rows == 1 && m.cols == 1);
  return m.at(0, 0);
}

void Tape::backward(int node) {
  grad_of(node).at(0, 0) = 1.0;
  for (int i = node; i >= 0; --i) {
    if (!has_grad(i)) continue;
    if (nodes_[i].back) nodes_[i].back();
  }
}

int Tape::embed(const std::vector<int>& tokens) {
  const ArchDescriptor& arch = params_.arch;
  const int t_len = static_cast<int>(tokens.size());
  if (t_len > arch.context_len)
    throw Error(ErrorKind::ContextOverflow,
                std::to_string(t_len) + " tokens exceed context length " +
                    std::to_string(arch.context_len));
  const int d = arch.embed_dim;
  const ParamEntry& wte = params_.entry("wte");
  const ParamEntry& wpe = params_.entry("wpe");
  Mat out(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    const int tok = tokens[t];
    if (tok < 0 || tok >= arch.vocab_size)
      throw Error(ErrorKind::UnknownSymbol,
                  "token id out of range: " + std::to_string(tok));
    const double* te = params_.theta.data() + wte.offset + size_t(tok) * d;
    const double* pe = params_.theta.data() + wpe.offset + size_t(t) * d;
    double* o = out.row(t);
    for (int c = 0; c < d; ++c) o[c] = te[c] + pe[c];
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, id, tokens, d, wte, wpe]() {
    const Mat& g = nodes_[id].grad;
    for (int t = 0; t < g.rows; ++t) {
      double* gte = pgrad_.data() + wte.offset + size_t(tokens[t]) * d;
      double* gpe = pgrad_.data() + wpe.offset + size_t(t) * d;
      const double* gr = g.row(t);
      for (int c = 0; c < d; ++c) {
        gte[c] += gr[c];
        gpe[c] += gr[c];
      }
    }
  };
  return id;
}

int Tape::rmsnorm(int x, const std::string& gain_name) {
  constexpr double kEps = 1e-8;
  const Mat& xv = nodes_[x].val;
  const int d = xv.cols;
  const ParamEntry& ge = params_.entry(gain_name);
  assert(ge.rows == 1 && ge.cols == d);
  const double* gain = params_.theta.data() + ge.offset;

  Mat out(xv.rows, d);
  std::vector<double> inv(xv.rows);
  for (int t = 0; t < xv.rows; ++t) {
    const double* xr = xv.row(t);
    double ms = 0.0;
    for (int c = 0; c < d; ++c) ms += xr[c] * xr[c];
    ms = ms / d + kEps;
    inv[t] = 1.0 / std::sqrt(ms);
    double* o = out.row(t);
    for (int c = 0; c < d; ++c) o[c] = xr[c] * inv[t] * gain[c];
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x, ge, inv = std::move(inv), d]() {
    const Mat& g = nodes_[id].grad;
    const Mat& xv = nodes_[x].val;
    const double* gain = params_.theta.data() + ge.offset;
    Mat& gx = grad_of(x);
    double* ggain = pgrad_.data() + ge.offset;
    for (int t = 0; t < g.rows; ++t) {
      const double* gr = g.row(t);
      const double* xr = xv.row(t);
      double* gxr = gx.row(t);
      const double iv = inv[t];
      double dot = 0.0;  // Σ_c g_c · gain_c · x_c
      for (int c = 0; c < d; ++c) dot += gr[c] * gain[c] * xr[c];
      const double coef = iv * iv * iv * dot / d;
      for (int c = 0; c < d; ++c) {
        gxr[c] += gr[c] * gain[c] * iv - xr[c] * coef;
        ggain[c] += gr[c] * xr[c] * iv;
      }
    }
  };
  return id;
}

int Tape::matmul(int x, const std::string& weight_name) {
  const Mat& xv = nodes_[x].val;
  const ParamEntry& we = params_.entry(weight_name);
  if (xv.cols != we.rows)
    throw Error(ErrorKind::ShapeMismatch,
                "matmul " + weight_name + ": " + std::to_string(xv.cols) +
                    " vs " + std::to_string(we.rows));
  Mat out(xv.rows, we.cols);
  const double* w = params_.theta.data() + we.offset;
  kernels::matmul_nn(xv.a.data(), w, out.a.data(), xv.rows, xv.cols, we.cols);
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x, we]() {
    const Mat& g = nodes_[id].grad;
    const Mat& xv = nodes_[x].val;
    const double* w = params_.theta.data() + we.offset;
    // dX += dY·Wᵀ ; dW += Xᵀ·dY
    Mat& gx = grad_of(x);
    kernels::matmul_nt(g.a.data(), w, gx.a.data(), g.rows, g.cols, xv.cols,
                       /*accumulate=*/true);
    kernels::matmul_tn(xv.a.data(), g.a.data(), pgrad_.data() + we.offset,
                       xv.rows, xv.cols, g.cols, /*accumulate=*/true);
  };
  return id;
}

int Tape::add(int a, int b) {
  const Mat& av = nodes_[a].val;
  const Mat& bv = nodes_[b].val;
  assert(av.rows == bv.rows && av.cols == bv.cols);
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < out.size(); ++i) out.a[i] = av.a[i] + bv.a[i];
  int id = push(std::move(out));
  nodes_[id].back = [this, id, a, b]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = grad_of(a);
    Mat& gb = grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.a[i] += g.a[i];
      gb.a[i] += g.a[i];
    }
  };
  return id;
}

int Tape::mul(int a, int b) {
  const Mat& av = nodes_[a].val;
  const Mat& bv = nodes_[b].val;
  assert(av.rows == bv.rows && av.cols == bv.cols);
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < out.size(); ++i) out.a[i] = av.a[i] * bv.a[i];
  int id = push(std::move(out));
  nodes_[id].back = [this, id, a, b]() {
    const Mat& g = nodes_[id].grad;
    const Mat& av = nodes_[a].val;
    const Mat& bv = nodes_[b].val;
    Mat& ga = grad_of(a);
    Mat& gb = grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.a[i] += g.a[i] * bv.a[i];
      gb.a[i] += g.a[i] * av.a[i];
    }
  };
  return id;
}

int Tape::gelu(int x) {
  constexpr double kS = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Mat& xv = nodes_[x].val;
  Mat out(xv.rows, xv.cols);
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = xv.a[i];
    out.a[i] = 0.5 * v * (1.0 + std::tanh(kS * (v + kA * v * v * v)));
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x]() {
    const Mat& g = nodes_[id].grad;
    const Mat& xv = nodes_[x].val;
    Mat& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = xv.a[i];
      const double u = kS * (v + kA * v * v * v);
      const double th = std::tanh(u);
      const double sech2 = 1.0 - th * th;
      const double dv = 0.5 * (1.0 + th) +
                        0.5 * v * sech2 * kS * (1.0 + 3.0 * kA * v * v);
      gx.a[i] += g.a[i] * dv;
    }
  };
  return id;
}

int Tape::sigmoid(int x) {
  const Mat& xv = nodes_[x].val;
  Mat out(xv.rows, xv.cols);
  for (size_t i = 0; i < out.size(); ++i) out.a[i] = orpo::sigmoid(xv.a[i]);
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x]() {
    const Mat& g = nodes_[id].grad;
    const Mat& yv = nodes_[id].val;
    Mat& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i)
      gx.a[i] += g.a[i] * yv.a[i] * (1.0 - yv.a[i]);
  };
  return id;
}

int Tape::causal_attention(int q, int k, int v, int n_head) {
  const Mat& qv = nodes_[q].val;
  const Mat& kv = nodes_[k].val;
  const Mat& vv = nodes_[v].val;
  const int t_len = qv.rows;
  const int d = qv.cols;
  assert(d % n_head == 0);
  const int dh = d / n_head;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat out(t_len, d);
  // One causal attention matrix per head, saved for the backward pass.
  std::vector<Mat> probs(n_head);
  for (int h = 0; h < n_head; ++h) {
    probs[h] = Mat(t_len, t_len);
    const int c0 = h * dh;
    for (int i = 0; i < t_len; ++i) {
      double* p = probs[h].row(i);
      double mx = -1e300;
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        const double* qr = qv.row(i) + c0;
        const double* kr = kv.row(j) + c0;
        for (int c = 0; c < dh; ++c) s += qr[c] * kr[c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double total = 0.0;
      for (int j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      const double inv = 1.0 / total;
      for (int j = 0; j <= i; ++j) p[j] *= inv;
      double* o = out.row(i) + c0;
      for (int j = 0; j <= i; ++j) {
        const double* vr = vv.row(j) + c0;
        const double pj = p[j];
        for (int c = 0; c < dh; ++c) o[c] += pj * vr[c];
      }
    }
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, id, q, k, v, n_head, dh, scale,
                     probs = std::move(probs)]() {
    const Mat& g = nodes_[id].grad;
    const Mat& qv = nodes_[q].val;
    const Mat& kv = nodes_[k].val;
    const Mat& vv = nodes_[v].val;
    Mat& gq = grad_of(q);
    Mat& gk = grad_of(k);
    Mat& gv = grad_of(v);
    const int t_len = g.rows;
    std::vector<double> dp(t_len), ds(t_len);
    for (int h = 0; h < n_head; ++h) {
      const int c0 = h * dh;
      const Mat& p = probs[h];
      for (int i = 0; i < t_len; ++i) {
        const double* go = g.row(i) + c0;
        const double* pr = p.row(i);
        // dP and dV
        for (int j = 0; j <= i; ++j) {
          const double* vr = vv.row(j) + c0;
          double acc = 0.0;
          for (int c = 0; c < dh; ++c) acc += go[c] * vr[c];
          dp[j] = acc;
          double* gvr = gv.row(j) + c0;
          for (int c = 0; c < dh; ++c) gvr[c] += pr[j] * go[c];
        }
        // softmax backward
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) dot += dp[j] * pr[j];
        for (int j = 0; j <= i; ++j) ds[j] = pr[j] * (dp[j] - dot) * scale;
        // dQ and dK
        double* gqr = gq.row(i) + c0;
        for (int j = 0; j <= i; ++j) {
          const double* kr = kv.row(j) + c0;
          const double* qr = qv.row(i) + c0;
          double* gkr = gk.row(j) + c0;
          const double dsj = ds[j];
          for (int c = 0; c < dh; ++c) {
            gqr[c] += dsj * kr[c];
            gkr[c] += dsj * qr[c];
          }
        }
      }
    }
  };
  return id;
}

int Tape::window_concat(int x, int window) {
  const Mat& xv = nodes_[x].val;
  const int d = xv.cols;
  Mat out(xv.rows, window * d);
  for (int t = 0; t < xv.rows; ++t) {
    double* o = out.row(t);
    for (int j = 0; j < window; ++j) {
      if (t - j < 0) break;  // remaining slots stay zero
      const double* xr = xv.row(t - j);
      std::copy(xr, xr + d, o + size_t(j) * d);
    }
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x, window, d]() {
    const Mat& g = nodes_[id].grad;
    Mat& gx = grad_of(x);
    for (int t = 0; t < g.rows; ++t) {
      const double* gr = g.row(t);
      for (int j = 0; j < window && t - j >= 0; ++j) {
        double* gxr = gx.row(t - j);
        const double* seg = gr + size_t(j) * d;
        for (int c = 0; c < d; ++c) gxr[c] += seg[c];
      }
    }
  };
  return id;
}

int Tape::prefix_mean(int x) {
  const Mat& xv = nodes_[x].val;
  const int d = xv.cols;
  Mat out(xv.rows, d);
  std::vector<double> run(d, 0.0);
  for (int t = 0; t < xv.rows; ++t) {
    const double* xr = xv.row(t);
    double* o = out.row(t);
    const double inv = 1.0 / (t + 1);
    for (int c = 0; c < d; ++c) {
      run[c] += xr[c];
      o[c] = run[c] * inv;
    }
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x, d]() {
    const Mat& g = nodes_[id].grad;
    Mat& gx = grad_of(x);
    std::vector<double> acc(d, 0.0);
    for (int t = g.rows - 1; t >= 0; --t) {
      const double* gr = g.row(t);
      const double inv = 1.0 / (t + 1);
      double* gxr = gx.row(t);
      for (int c = 0; c < d; ++c) {
        acc[c] += gr[c] * inv;
        gxr[c] += acc[c];
      }
    }
  };
  return id;
}

int Tape::mean_log_softmax(int logits, std::vector<int> targets, int first_row,
                           std::vector<double>* per_token_out) {
  const Mat& lv = nodes_[logits].val;
  const int n = static_cast<int>(targets.size());
  const int vv = lv.cols;
  if (n == 0) throw Error(ErrorKind::EmptyResponse, "no target tokens");
  if (first_row < 0 || first_row + n > lv.rows)
    throw Error(ErrorKind::ShapeMismatch, "target rows out of range");

  Mat probs(n, vv);
  double mean = 0.0;
  std::vector<double> per_token(n);
  for (int j = 0; j < n; ++j) {
    const double* lr = lv.row(first_row + j);
    double mx = lr[0];
    for (int c = 1; c < vv; ++c) mx = std::max(mx, lr[c]);
    double total = 0.0;
    double* pr = probs.row(j);
    for (int c = 0; c < vv; ++c) {
      pr[c] = std::exp(lr[c] - mx);
      total += pr[c];
    }
    const double inv = 1.0 / total;
    for (int c = 0; c < vv; ++c) pr[c] *= inv;
    const int tgt = targets[j];
    if (tgt < 0 || tgt >= vv)
      throw Error(ErrorKind::UnknownSymbol, "target id out of range");
    per_token[j] = lr[tgt] - mx - std::log(total);
    mean += per_token[j];
  }
  mean /= n;
  if (per_token_out) *per_token_out = per_token;

  Mat out(1, 1);
  out.at(0, 0) = mean;
  int id = push(std::move(out));
  nodes_[id].back = [this, id, logits, targets = std::move(targets), first_row,
                     probs = std::move(probs)]() {
    const double seed = nodes_[id].grad.at(0, 0);
    Mat& gl = grad_of(logits);
    const int n = static_cast<int>(targets.size());
    const double w = seed / n;
    for (int j = 0; j < n; ++j) {
      double* glr = gl.row(first_row + j);
      const double* pr = probs.row(j);
      for (int c = 0; c < gl.cols; ++c) glr[c] -= w * pr[c];
      glr[targets[j]] += w;
    }
  };
  return id;
}

int Tape::constant(double v) {
  Mat m(1, 1);
  m.at(0, 0) = v;
  return push(std::move(m));
}

int Tape::clamp_max(int x, double cap) {
  const double xv = scalar(x);
  Mat m(1, 1);
  m.at(0, 0) = std::min(xv, cap);
  int id = push(std::move(m));
  nodes_[id].back = [this, id, x, cap]() {
    if (nodes_[x].val.at(0, 0) < cap)
      grad_of(x).at(0, 0) += nodes_[id].grad.at(0, 0);
  };
  return id;
}

int Tape::log_odds(int x) {
  const double m = scalar(x);
  Mat out(1, 1);
  out.at(0, 0) = orpo::log_odds(m);
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x]() {
    const double m = nodes_[x].val.at(0, 0);
    // d/dm [m - log(1 - e^m)] = 1/(1 - e^m)
    const double dm = 1.0 / (-std::expm1(m));
    grad_of(x).at(0, 0) += nodes_[id].grad.at(0, 0) * dm;
  };
  return id;
}

int Tape::sub(int a, int b) {
  Mat out(1, 1);
  out.at(0, 0) = scalar(a) - scalar(b);
  int id = push(std::move(out));
  nodes_[id].back = [this, id, a, b]() {
    const double g = nodes_[id].grad.at(0, 0);
    grad_of(a).at(0, 0) += g;
    grad_of(b).at(0, 0) -= g;
  };
  return id;
}

int Tape::softplus_neg(int x) {
  Mat out(1, 1);
  out.at(0, 0) = orpo::softplus(-scalar(x));
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x]() {
    const double xv = nodes_[x].val.at(0, 0);
    grad_of(x).at(0, 0) -= nodes_[id].grad.at(0, 0) * orpo::sigmoid(-xv);
  };
  return id;
}

int Tape::add_scaled(int a, double lam, int b) {
  Mat out(1, 1);
  out.at(0, 0) = scalar(a) + lam * scalar(b);
  int id = push(std::move(out));
  nodes_[id].back = [this, id, a, b, lam]() {
    const double g = nodes_[id].grad.at(0, 0);
    grad_of(a).at(0, 0) += g;
    grad_of(b).at(0, 0) += lam * g;
  };
  return id;
}

int Tape::scale(int x, double s) {
  const Mat& xv = nodes_[x].val;
  Mat out(xv.rows, xv.cols);
  for (size_t i = 0; i < out.size(); ++i) out.a[i] = s * xv.a[i];
  int id = push(std::move(out));
  nodes_[id].back = [this, id, x, s]() {
    const Mat& g = nodes_[id].grad;
    Mat& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx.a[i] += s * g.a[i];
  };
  return id;
}

int Tape::param_sq_norm() {
  double acc = 0.0;
  for (double v : params_.theta) acc += v * v;
  Mat out(1, 1);
  out.at(0, 0) = acc;
  int id = push(std::move(out));
  nodes_[id].back = [this, id]() {
    const double g = nodes_[id].grad.at(0, 0);
    for (size_t i = 0; i < pgrad_.size(); ++i)
      pgrad_[i] += 2.0 * params_.theta[i] * g;
  };
  return id;
}

}  // namespace orpod::lm
