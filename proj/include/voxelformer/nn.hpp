#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voxelformer/ops.hpp"
#include "voxelformer/rng.hpp"
#include "voxelformer/tensor.hpp"

namespace vxf {

using NamedTensor = std::pair<std::string, Tensor>;
using ParamList = std::vector<NamedTensor>;

inline void collect(ParamList& out, const std::string& prefix,
                    const char* name, const Tensor& t) {
  out.emplace_back(prefix + name, t);
}

// weight [in,out], bias [out]; y = x @ W + b
struct Linear {
  Tensor weight, bias;

  Linear() = default;
  // std=0.02 weights, zero bias; std=0 zero-initializes the weight too
  Linear(int64_t in, int64_t out, Rng& rng, double std = 0.02,
         bool trainable = true);

  Tensor forward(const Tensor& x) const {
    return add_rowwise(matmul(x, weight), bias);
  }
  void params(ParamList& out, const std::string& prefix) const {
    collect(out, prefix, ".weight", weight);
    collect(out, prefix, ".bias", bias);
  }
  int64_t in_dim() const { return weight.dim(0); }
  int64_t out_dim() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gain, bias;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(int64_t dim, bool trainable = true);

  Tensor forward(const Tensor& x) const {
    return layernorm(x, gain, bias, eps);
  }
  void params(ParamList& out, const std::string& prefix) const {
    collect(out, prefix, ".gain", gain);
    collect(out, prefix, ".bias", bias);
  }
};

// Multi-head attention with pre-norm residual. Output projection is
// zero-initialized so a fresh block is the identity map.
struct AttentionBlock {
  int64_t heads = 0;
  int64_t dim = 0;
  LayerNorm norm_q;   // applied to the query-side input
  LayerNorm norm_kv;  // applied to the context in cross-attention
  Linear wq, wk, wv, wo;

  AttentionBlock() = default;
  AttentionBlock(int64_t dim, int64_t heads, Rng& rng);

  void params(ParamList& out, const std::string& prefix) const;
};

struct AttentionOutput {
  Tensor latents;    // [B,N,C], residual added
  Tensor attention;  // [B,H,N,N] post-softmax rows
};

// Scaled dot-product self-attention; the attention tensor is the exact
// softmax used in the forward pass.
AttentionOutput self_attention(const Tensor& x, const AttentionBlock& block);

// Queries [B,Q,C] attend to context [B,N,C]; output [B,Q,C] for any N.
// Permuting context tokens leaves the output unchanged within 1e-9.
Tensor cross_attention(const Tensor& queries, const Tensor& context,
                       const AttentionBlock& block);

// Pre-norm residual MLP with GELU; fc2 zero-initialized (identity at init).
struct Ffn {
  LayerNorm norm;
  Linear fc1, fc2;

  Ffn() = default;
  Ffn(int64_t dim, int64_t hidden_mult, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void params(ParamList& out, const std::string& prefix) const;
};

}  // namespace vxf
