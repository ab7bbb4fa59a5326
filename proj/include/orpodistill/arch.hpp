#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace orpod::lm {

// Two structurally different model families expose the same interface:
//   attn-small  — pre-norm decoder transformer (causal self-attention + MLP)
//   conv-gated  — attention-free stack: gated causal window convolution
//                 plus a causal prefix-mean mixer, then an MLP
inline constexpr const char* kFamilyAttn = "attn-small";
inline constexpr const char* kFamilyConvGated = "conv-gated";
inline constexpr int kConvWindow = 5;

struct ArchDescriptor {
  std::string family = kFamilyAttn;
  int embed_dim = 32;
  int hidden_dim = 128;
  int layers = 2;
  int context_len = 176;
  int vocab_size = 0;
  int bos_id = -1;
  int eos_id = -1;

  bool is_attn() const { return family == kFamilyAttn; }
  int heads() const { return is_attn() && embed_dim % 32 == 0 ? embed_dim / 32 : 1; }
  void validate() const;

  nlohmann::json to_json() const;
  static ArchDescriptor from_json(const nlohmann::json& j);
  bool operator==(const ArchDescriptor&) const = default;
};

struct ParamEntry {
  std::string name;
  size_t offset = 0;
  int rows = 0;
  int cols = 0;
  size_t extent() const { return static_cast<size_t>(rows) * cols; }
};

struct Layout {
  std::vector<ParamEntry> entries;
  std::unordered_map<std::string, size_t> index;
  size_t total = 0;

  const ParamEntry& entry(const std::string& name) const;
};

Layout build_layout(const ArchDescriptor& arch);

// A model is its architecture plus one flat parameter vector; the layout
// maps names to slices of theta.
struct LmParams {
  ArchDescriptor arch;
  Layout layout;
  std::vector<double> theta;

  const ParamEntry& entry(const std::string& name) const {
    return layout.entry(name);
  }
  double* param(const std::string& name) {
    return theta.data() + layout.entry(name).offset;
  }
  const double* param(const std::string& name) const {
    return theta.data() + layout.entry(name).offset;
  }
};

// Gaussian init (std 0.08); norm gains start at 1.
LmParams init_params(const ArchDescriptor& arch, uint64_t seed);

}  // namespace orpod::lm
