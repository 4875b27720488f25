#pragma once

#include "voxelformer/nn.hpp"

namespace vxf {

struct HeadsConfig {
  int64_t queries = 16;        // Q
  int64_t dim = 64;            // C
  int64_t heads = 4;
  int64_t prior_layers = 2;    // P
  int64_t ffn_mult = 4;
  int64_t target_tokens = 1;   // T_t
  int64_t target_dim = 64;     // D_t
  int64_t retrieval_dim = 64;  // D_r
  int64_t projector_hidden = 256;
};

// Transformer head regressing the frozen target embedding under MSE:
// P x (self-attention + ffn) over the query outputs, then a linear read-out
// to the flattened target shape.
class PriorHead {
 public:
  PriorHead() = default;
  PriorHead(const HeadsConfig& cfg, Rng& rng);

  // q_out [B,Q,C] -> [B, T_t*D_t]
  Tensor forward(const Tensor& q_out) const;
  void params(ParamList& out, const std::string& prefix) const;
  Linear& readout() { return readout_; }

 private:
  HeadsConfig cfg_;
  std::vector<AttentionBlock> attn_;
  std::vector<Ffn> ffn_;
  Linear readout_;
};

// MLP projector producing unit-norm retrieval embeddings:
// flatten -> linear -> GELU -> linear -> L2 normalize.
class ProjectorHead {
 public:
  ProjectorHead() = default;
  ProjectorHead(const HeadsConfig& cfg, Rng& rng);

  // q_out [B,Q,C] -> [B, D_r], every row unit L2 norm within 1e-9
  Tensor forward(const Tensor& q_out) const;
  void params(ParamList& out, const std::string& prefix) const;

 private:
  HeadsConfig cfg_;
  Linear fc1_, fc2_;
};

}  // namespace vxf
