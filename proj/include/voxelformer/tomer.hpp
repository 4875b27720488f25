#pragma once

#include <vector>

#include "voxelformer/nn.hpp"

namespace vxf {

// Batch of token embeddings plus per-token size weights (how many original
// voxels each token has absorbed). Size mass is conserved by every merge:
// sum(sizes) == original N at every stage, exactly.
struct TokenSet {
  Tensor tokens;  // [B,n,C]
  Tensor sizes;   // [B,n], positive reals, no gradient
  int64_t count = 0;
};

struct MergePair {
  int64_t src = 0;  // removed token (even-position set)
  int64_t dst = 0;  // surviving token (odd-position set)
  double score = 0.0;
};

// The deterministic pairing chosen by one merging step for one batch
// element; pairs are a matching (all 2M indices distinct), sorted by
// descending score with ties broken by lowest (src,dst).
struct MergePlan {
  std::vector<MergePair> pairs;
};

enum class PeMode { Siren, Fixed };
enum class MergeMetric { Attention, KeyCosine };

// Coordinate-based positional embedding: a 2-layer sine-activated MLP
// (3 -> hidden -> C) with first-layer frequency omega0.
struct CoordinatePE {
  PeMode mode = PeMode::Siren;
  int64_t out_dim = 0;
  double omega0 = 30.0;
  Linear l1, l2;  // siren mode only

  CoordinatePE() = default;
  CoordinatePE(int64_t out_dim, int64_t hidden, double omega0, PeMode mode,
               bool trainable, Rng& rng);

  // coords [B,N,3] in [-1,1] -> [B,N,C]
  Tensor forward(const Tensor& coords) const;
  void params(ParamList& out, const std::string& prefix) const;
};

struct TomerConfig {
  int64_t dim = 64;              // C
  int64_t heads = 4;             // H
  int64_t stages = 2;            // L
  int64_t merges_per_stage = 8;  // M
  int64_t pe_hidden = 32;
  double pe_omega0 = 30.0;
  PeMode pe_mode = PeMode::Siren;
  bool pe_trainable = true;
  MergeMetric merge_metric = MergeMetric::Attention;
};

// One plan per batch element; plans differ per sample because attention does.
using StagePlans = std::vector<MergePlan>;

// Greedy bipartite matching over head-averaged attention: tokens split into
// even (proposers) and odd (destinations) positions,
// similarity(a,b) = attn[a,b] + attn[b,a]; each proposer offers its best
// destination, globally highest offers win, and a proposer whose destination
// is already taken re-proposes its best remaining one. Ties break toward the
// lowest (src,dst) pair.
StagePlans plan_merge(const Tensor& attn_avg, int64_t m);

// destination := size-weighted mean of the pair; source rows removed,
// survivor order preserved. Differentiable: gradients reach both merged
// tokens weighted by their size fractions (the plan itself is a frozen
// discrete choice).
TokenSet apply_merge(const TokenSet& ts, const StagePlans& plans);

struct EncodeResult {
  TokenSet tokens;
  std::vector<StagePlans> plans;                // one entry per stage
  std::vector<Tensor> stage_attention;          // [B,H,n,n] per stage
};

class TomerEncoder {
 public:
  TomerEncoder() = default;
  TomerEncoder(const TomerConfig& cfg, Rng& rng);

  // responses [B,N], coords [B,N,3] in [-1,1] -> TokenSet with n = N and
  // sizes all one.
  TokenSet tokenize(const Tensor& responses, const Tensor& coords) const;

  // tokenize + stages x (self-attention -> plan -> merge). Final count is
  // exactly N - M*L. Passing fixed_plans replays recorded merge decisions
  // (used by the finite-difference gradient oracle).
  EncodeResult encode(const Tensor& responses, const Tensor& coords,
                      const std::vector<StagePlans>* fixed_plans = nullptr) const;

  const TomerConfig& config() const { return cfg_; }
  const std::vector<AttentionBlock>& blocks() const { return blocks_; }
  void params(ParamList& out, const std::string& prefix) const;

 private:
  TomerConfig cfg_;
  Linear tokenizer_;  // shared per-voxel map from the scalar response to C
  CoordinatePE pe_;
  std::vector<AttentionBlock> blocks_;
};

}  // namespace vxf
