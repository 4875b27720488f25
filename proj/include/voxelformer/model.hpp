#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "voxelformer/heads.hpp"
#include "voxelformer/qformer.hpp"
#include "voxelformer/tomer.hpp"

namespace vxf {

struct ModelConfig {
  int64_t dim = 64;              // C
  int64_t heads = 4;             // H
  int64_t stages = 2;            // L
  int64_t merges_per_stage = 8;  // M
  int64_t queries = 16;          // Q
  int64_t qformer_layers = 2;    // R
  int64_t prior_layers = 2;      // P
  int64_t retrieval_dim = 64;    // D_r
  int64_t target_tokens = 1;     // T_t
  int64_t target_dim = 64;       // D_t
  int64_t ffn_mult = 4;
  int64_t projector_hidden = 256;
  int64_t pe_hidden = 32;
  double pe_omega0 = 30.0;
  PeMode pe_mode = PeMode::Siren;
  bool pe_trainable = true;
  MergeMetric merge_metric = MergeMetric::Attention;

  int64_t target_flat_dim() const { return target_tokens * target_dim; }
  void validate() const;
};

struct ForwardResult {
  EncodeResult encoded;
  Tensor q_out;       // [B,Q,C]
  Tensor prior;       // [B, T_t*D_t]
  Tensor projection;  // [B, D_r], unit rows
};

// The whole pipeline: ToMer encoder -> Q-Former -> prior + projector heads.
// The forward pass consumes only (responses, coords); nothing in the model
// is conditioned on a subject identity.
class VoxelFormer {
 public:
  VoxelFormer(const ModelConfig& cfg, uint64_t seed);

  ForwardResult forward(const Tensor& responses, const Tensor& coords,
                        const std::vector<StagePlans>* fixed_plans = nullptr) const;

  // Frozen image-side embedding: targets through a seeded orthonormal map
  // into the retrieval space, then L2-normalized. The contrastive losses
  // train against these same vectors so both sides share a space.
  Tensor map_targets(const Tensor& targets) const;

  ParamList parameters() const;  // trainable
  ParamList buffers() const;     // frozen named tensors (retrieval map, etc.)

  const ModelConfig& config() const { return cfg_; }
  const TomerEncoder& tomer() const { return tomer_; }
  const QFormer& qformer() const { return qformer_; }
  PriorHead& prior_head() { return prior_; }
  ProjectorHead& projector_head() { return projector_; }

 private:
  ModelConfig cfg_;
  TomerEncoder tomer_;
  QFormer qformer_;
  PriorHead prior_;
  ProjectorHead projector_;
  Tensor retrieval_map_;  // [T_t*D_t, D_r], orthonormal columns, frozen
};

struct ParamCount {
  int64_t total = 0;
  std::map<std::string, int64_t> by_module;  // first path component
};

ParamCount count_params(const ParamList& params);

}  // namespace vxf
