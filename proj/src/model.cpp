#include "orpodistill/model.hpp"

#include <cmath>

#include "orpodistill/error.hpp"
#include "orpodistill/kernels.hpp"
#include "orpodistill/orpo.hpp"

namespace orpod::lm {

// ---------- architecture ----------

void ArchDescriptor::validate() const {
  if (family != kFamilyAttn && family != kFamilyConvGated)
    throw Error(ErrorKind::InvalidConfig, "unknown family: " + family);
  if (embed_dim < 1 || hidden_dim < 1 || layers < 1 || context_len < 2)
    throw Error(ErrorKind::InvalidConfig, "bad architecture dimensions");
  if (is_attn() && embed_dim % heads() != 0)
    throw Error(ErrorKind::InvalidConfig, "embed_dim not divisible by heads");
  if (vocab_size < 1)
    throw Error(ErrorKind::InvalidConfig, "vocab_size must be set");
  if (bos_id < 0 || bos_id >= vocab_size || eos_id < 0 ||
      eos_id >= vocab_size)
    throw Error(ErrorKind::InvalidConfig, "bos/eos ids out of range");
}

nlohmann::json ArchDescriptor::to_json() const {
  return {{"family", family},       {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim}, {"layers", layers},
          {"context_len", context_len}, {"vocab_size", vocab_size},
          {"bos_id", bos_id},       {"eos_id", eos_id}};
}

ArchDescriptor ArchDescriptor::from_json(const nlohmann::json& j) {
  ArchDescriptor a;
  a.family = j.at("family").get<std::string>();
  a.embed_dim = j.at("embed_dim").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.layers = j.at("layers").get<int>();
  a.context_len = j.at("context_len").get<int>();
  a.vocab_size = j.at("vocab_size").get<int>();
  a.bos_id = j.at("bos_id").get<int>();
  a.eos_id = j.at("eos_id").get<int>();
  return a;
}

const ParamEntry& Layout::entry(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end())
    throw Error(ErrorKind::ShapeMismatch, "unknown parameter: " + name);
  return entries[it->second];
}

Layout build_layout(const ArchDescriptor& arch) {
  arch.validate();
  Layout layout;
  auto push = [&](const std::string& name, int rows, int cols) {
    ParamEntry e{name, layout.total, rows, cols};
    layout.index[name] = layout.entries.size();
    layout.entries.push_back(e);
    layout.total += e.extent();
  };
  const int d = arch.embed_dim;
  const int h = arch.hidden_dim;
  push("wte", arch.vocab_size, d);
  push("wpe", arch.context_len, d);
  for (int i = 0; i < arch.layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    push(p + "g1", 1, d);
    if (arch.is_attn()) {
      push(p + "wq", d, d);
      push(p + "wk", d, d);
      push(p + "wv", d, d);
      push(p + "wo", d, d);
    } else {
      push(p + "wconv", kConvWindow * d, d);
      push(p + "wmix", d, d);
      push(p + "wgate", d, d);
      push(p + "wo", d, d);
    }
    push(p + "g2", 1, d);
    push(p + "w1", d, h);
    push(p + "w2", h, d);
  }
  push("gf", 1, d);
  push("wout", d, arch.vocab_size);
  return layout;
}

LmParams init_params(const ArchDescriptor& arch, uint64_t seed) {
  LmParams p;
  p.arch = arch;
  p.layout = build_layout(arch);
  p.theta.assign(p.layout.total, 0.0);
  Rng rng = derive_stream(seed, "init");
  constexpr double kStd = 0.08;
  for (const ParamEntry& e : p.layout.entries) {
    double* dst = p.theta.data() + e.offset;
    const bool is_gain = e.name == "gf" || e.name.ends_with(".g1") ||
                         e.name.ends_with(".g2");
    if (is_gain) {
      std::fill(dst, dst + e.extent(), 1.0);
    } else {
      for (size_t i = 0; i < e.extent(); ++i) dst[i] = kStd * rng.normal();
    }
  }
  return p;
}

// ---------- tape builders ----------

namespace {

int build_block_stack(Tape& tape, int x) {
  const ArchDescriptor& arch = tape.params().arch;
  for (int i = 0; i < arch.layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    int a = tape.rmsnorm(x, p + "g1");
    int mixed;
    if (arch.is_attn()) {
      int q = tape.matmul(a, p + "wq");
      int k = tape.matmul(a, p + "wk");
      int v = tape.matmul(a, p + "wv");
      mixed = tape.causal_attention(q, k, v, arch.heads());
    } else {
      int win = tape.window_concat(a, kConvWindow);
      int local = tape.matmul(win, p + "wconv");
      int global = tape.matmul(tape.prefix_mean(a), p + "wmix");
      int gate = tape.sigmoid(tape.matmul(a, p + "wgate"));
      mixed = tape.mul(tape.add(local, global), gate);
    }
    x = tape.add(x, tape.matmul(mixed, p + "wo"));
    int b = tape.rmsnorm(x, p + "g2");
    int m = tape.matmul(tape.gelu(tape.matmul(b, p + "w1")), p + "w2");
    x = tape.add(x, m);
  }
  return x;
}

}  // namespace

int build_logits(Tape& tape, const std::vector<int>& fed_tokens) {
  int x = tape.embed(fed_tokens);
  x = build_block_stack(tape, x);
  x = tape.rmsnorm(x, "gf");
  return tape.matmul(x, "wout");
}

int build_response_mean_lp(Tape& tape, const text::TokenSeq& prompt,
                           const text::TokenSeq& response,
                           std::vector<double>* per_token) {
  const ArchDescriptor& arch = tape.params().arch;
  if (response.empty())
    throw Error(ErrorKind::EmptyResponse, "response must be nonempty");
  const size_t fed_len = 1 + prompt.size() + response.size() - 1;
  if (fed_len > static_cast<size_t>(arch.context_len))
    throw Error(ErrorKind::ContextOverflow,
                "prompt+response of " + std::to_string(fed_len) +
                    " exceeds context " + std::to_string(arch.context_len));
  std::vector<int> fed;
  fed.reserve(fed_len);
  fed.push_back(arch.bos_id);
  fed.insert(fed.end(), prompt.ids.begin(), prompt.ids.end());
  fed.insert(fed.end(), response.ids.begin(), response.ids.end() - 1);
  int logits = build_logits(tape, fed);
  // Row |prompt| (the last prompt token, or BOS when the prompt is empty)
  // predicts response[0].
  return tape.mean_log_softmax(logits, response.ids,
                               static_cast<int>(prompt.size()), per_token);
}

// ---------- incremental inference ----------

namespace {

void rmsnorm_vec(const double* x, const double* gain, double* out, int d) {
  constexpr double kEps = 1e-8;
  double ms = 0.0;
  for (int c = 0; c < d; ++c) ms += x[c] * x[c];
  const double inv = 1.0 / std::sqrt(ms / d + kEps);
  for (int c = 0; c < d; ++c) out[c] = x[c] * inv * gain[c];
}

void matvec(const double* x, const double* w, double* out, int in, int out_n,
            bool accumulate = false) {
  kernels::serial::matmul_nn(x, w, out, 1, in, out_n, accumulate);
}

double gelu_scalar(double v) {
  constexpr double kS = 0.7978845608028654;
  constexpr double kA = 0.044715;
  return 0.5 * v * (1.0 + std::tanh(kS * (v + kA * v * v * v)));
}

}  // namespace

InferenceState::InferenceState(const LmParams& params) : p_(params) {
  const ArchDescriptor& a = p_.arch;
  layers_.resize(a.layers);
  for (auto& l : layers_) {
    if (a.is_attn()) {
      l.k_cache = Mat(a.context_len, a.embed_dim);
      l.v_cache = Mat(a.context_len, a.embed_dim);
    } else {
      l.window = Mat(kConvWindow, a.embed_dim);
      l.runsum.assign(a.embed_dim, 0.0);
    }
  }
  logits_.resize(a.vocab_size);
  x_.resize(a.embed_dim);
  tmp_.resize(std::max(a.hidden_dim, a.embed_dim));
  tmp2_.resize(std::max(a.hidden_dim, a.embed_dim));
  norm_.resize(a.embed_dim);
  gate_.resize(a.embed_dim);
  mixed_.resize(a.embed_dim);
}

void InferenceState::reset() {
  pos_ = 0;
  for (auto& l : layers_) {
    l.k_cache.zero();
    l.v_cache.zero();
    l.window.zero();
    std::fill(l.runsum.begin(), l.runsum.end(), 0.0);
  }
}

const std::vector<double>& InferenceState::step(int token) {
  const ArchDescriptor& a = p_.arch;
  const int d = a.embed_dim;
  if (pos_ >= a.context_len)
    throw Error(ErrorKind::ContextOverflow, "decoder past context length");
  if (token < 0 || token >= a.vocab_size)
    throw Error(ErrorKind::UnknownSymbol,
                "token id out of range: " + std::to_string(token));

  const double* te = p_.param("wte") + size_t(token) * d;
  const double* pe = p_.param("wpe") + size_t(pos_) * d;
  for (int c = 0; c < d; ++c) x_[c] = te[c] + pe[c];

  for (int i = 0; i < a.layers; ++i) {
    const std::string pfx = "l" + std::to_string(i) + ".";
    LayerState& ls = layers_[i];
    rmsnorm_vec(x_.data(), p_.param(pfx + "g1"), norm_.data(), d);

    if (a.is_attn()) {
      const int heads = a.heads();
      const int dh = d / heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      double* q = tmp_.data();
      matvec(norm_.data(), p_.param(pfx + "wq"), q, d, d);
      matvec(norm_.data(), p_.param(pfx + "wk"), ls.k_cache.row(pos_), d, d);
      matvec(norm_.data(), p_.param(pfx + "wv"), ls.v_cache.row(pos_), d, d);
      const int t_len = pos_ + 1;
      std::vector<double> w(t_len);
      for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        double mx = -1e300;
        for (int j = 0; j < t_len; ++j) {
          double s = 0.0;
          const double* kr = ls.k_cache.row(j) + c0;
          for (int c = 0; c < dh; ++c) s += q[c0 + c] * kr[c];
          w[j] = s * scale;
          mx = std::max(mx, w[j]);
        }
        double total = 0.0;
        for (int j = 0; j < t_len; ++j) {
          w[j] = std::exp(w[j] - mx);
          total += w[j];
        }
        const double inv = 1.0 / total;
        double* o = mixed_.data() + c0;
        std::fill(o, o + dh, 0.0);
        for (int j = 0; j < t_len; ++j) {
          const double pj = w[j] * inv;
          const double* vr = ls.v_cache.row(j) + c0;
          for (int c = 0; c < dh; ++c) o[c] += pj * vr[c];
        }
      }
    } else {
      // ring slot for the current position
      std::copy(norm_.begin(), norm_.end(),
                ls.window.row(pos_ % kConvWindow));
      for (int c = 0; c < d; ++c) ls.runsum[c] += norm_[c];
      const double inv = 1.0 / (pos_ + 1);
      // local causal window: wconv blocks are ordered [now, now-1, ...]
      double* u = tmp_.data();
      std::fill(u, u + d, 0.0);
      const double* wconv = p_.param(pfx + "wconv");
      for (int j = 0; j < kConvWindow && pos_ - j >= 0; ++j) {
        const double* xr = ls.window.row((pos_ - j) % kConvWindow);
        kernels::serial::matmul_nn(xr, wconv + size_t(j) * d * d, u, 1, d, d,
                                   /*accumulate=*/true);
      }
      for (int c = 0; c < d; ++c) tmp2_[c] = ls.runsum[c] * inv;
      matvec(tmp2_.data(), p_.param(pfx + "wmix"), u, d, d,
             /*accumulate=*/true);
      matvec(norm_.data(), p_.param(pfx + "wgate"), gate_.data(), d, d);
      for (int c = 0; c < d; ++c) mixed_[c] = u[c] * orpo::sigmoid(gate_[c]);
    }

    matvec(mixed_.data(), p_.param(pfx + "wo"), tmp2_.data(), d, d);
    for (int c = 0; c < d; ++c) x_[c] += tmp2_[c];

    rmsnorm_vec(x_.data(), p_.param(pfx + "g2"), norm_.data(), d);
    matvec(norm_.data(), p_.param(pfx + "w1"), tmp_.data(), d, a.hidden_dim);
    for (int c = 0; c < a.hidden_dim; ++c) tmp_[c] = gelu_scalar(tmp_[c]);
    matvec(tmp_.data(), p_.param(pfx + "w2"), tmp2_.data(), a.hidden_dim, d);
    for (int c = 0; c < d; ++c) x_[c] += tmp2_[c];
  }

  rmsnorm_vec(x_.data(), p_.param("gf"), norm_.data(), d);
  matvec(norm_.data(), p_.param("wout"), logits_.data(), d, a.vocab_size);
  ++pos_;
  return logits_;
}

// ---------- decode entry points ----------

namespace {

// Feeds BOS + prompt; after this the state's logits predict the first
// generated token. Throws when the prompt itself does not fit.
InferenceState prefill(const LmParams& params, const text::TokenSeq& prompt) {
  const ArchDescriptor& a = params.arch;
  if (1 + prompt.size() > static_cast<size_t>(a.context_len))
    throw Error(ErrorKind::ContextOverflow,
                "prompt of " + std::to_string(prompt.size()) +
                    " does not fit context " + std::to_string(a.context_len));
  InferenceState st(params);
  st.step(a.bos_id);
  for (int id : prompt.ids) st.step(id);
  return st;
}

int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace

std::vector<double> forward_logits(const LmParams& params,
                                   const text::TokenSeq& context) {
  InferenceState st = prefill(params, context);
  return st.logits();
}

LogProbs response_log_probs(const LmParams& params,
                            const text::TokenSeq& prompt,
                            const text::TokenSeq& response) {
  Tape tape(params);
  LogProbs lp;
  int node = build_response_mean_lp(tape, prompt, response, &lp.per_token);
  lp.mean_lp = tape.scalar(node);
  lp.sum_lp = 0.0;
  for (double v : lp.per_token) lp.sum_lp += v;
  return lp;
}

text::TokenSeq sample(const LmParams& params, const text::TokenSeq& prompt,
                      double tau, int max_len, Rng& rng) {
  if (!(tau > 0.0))
    throw Error(ErrorKind::InvalidConfig, "temperature must be > 0");
  if (max_len < 1)
    throw Error(ErrorKind::InvalidConfig, "max_len must be >= 1");
  InferenceState st = prefill(params, prompt);
  text::TokenSeq out;
  out.vocab_tag = prompt.vocab_tag;
  std::vector<double> w(params.arch.vocab_size);
  const double inv_tau = 1.0 / tau;
  while (static_cast<int>(out.size()) < max_len) {
    const std::vector<double>& logits = st.logits();
    double mx = -1e300;
    for (size_t i = 0; i < w.size(); ++i)
      mx = std::max(mx, logits[i] * inv_tau);
    double total = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] = std::exp(logits[i] * inv_tau - mx);
      total += w[i];
    }
    const double r = rng.uniform() * total;
    double cum = 0.0;
    int pick = static_cast<int>(w.size()) - 1;
    for (size_t i = 0; i < w.size(); ++i) {
      cum += w[i];
      if (r < cum) {
        pick = static_cast<int>(i);
        break;
      }
    }
    if (pick == params.arch.eos_id) break;
    out.ids.push_back(pick);
    if (st.pos() >= params.arch.context_len) break;
    st.step(pick);
  }
  return out;
}

text::TokenSeq greedy_decode(const LmParams& params,
                             const text::TokenSeq& prompt, int max_len) {
  if (max_len < 1)
    throw Error(ErrorKind::InvalidConfig, "max_len must be >= 1");
  InferenceState st = prefill(params, prompt);
  text::TokenSeq out;
  out.vocab_tag = prompt.vocab_tag;
  while (static_cast<int>(out.size()) < max_len) {
    const int pick = argmax_lowest(st.logits());
    if (pick == params.arch.eos_id) break;
    out.ids.push_back(pick);
    if (st.pos() >= params.arch.context_len) break;
    st.step(pick);
  }
  return out;
}

// ---------- gradients ----------

double eval_loss(const LmParams& params, const LossBuilder& build) {
  Tape tape(params);
  return tape.scalar(build(tape));
}

std::vector<double> grad(const LmParams& params, const LossBuilder& build) {
  Tape tape(params);
  int node = build(tape);
  const double loss = tape.scalar(node);
  if (!std::isfinite(loss))
    throw Error(ErrorKind::NonFiniteLoss, "loss is not finite");
  tape.backward(node);
  for (double g : tape.param_grad())
    if (!std::isfinite(g))
      throw Error(ErrorKind::NonFiniteLoss, "gradient is not finite");
  return tape.param_grad();
}

double finite_diff_check(const LmParams& params, const LossBuilder& build,
                         double eps, std::span<const size_t> coords) {
  if (!(eps > 0.0)) throw Error(ErrorKind::InvalidConfig, "eps must be > 0");
  const std::vector<double> g = grad(params, build);
  LmParams probe = params;
  double max_rel = 0.0;
  for (size_t i : coords) {
    const double save = probe.theta[i];
    probe.theta[i] = save + eps;
    const double up = eval_loss(probe, build);
    probe.theta[i] = save - eps;
    const double down = eval_loss(probe, build);
    probe.theta[i] = save;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom =
        std::max({std::abs(numeric), std::abs(g[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(numeric - g[i]) / denom);
  }
  return max_rel;
}

}  // namespace orpod::lm
