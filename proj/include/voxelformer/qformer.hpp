#pragma once

#include "voxelformer/tomer.hpp"

namespace vxf {

// Fixed bank of trainable query tokens, shared across all subjects.
struct QueryBank {
  Tensor queries;  // [Q,C]

  QueryBank() = default;
  QueryBank(int64_t q, int64_t c, Rng& rng);
};

struct QFormerLayer {
  AttentionBlock cross;
  AttentionBlock self;
  Ffn ffn;
};

struct QFormerConfig {
  int64_t queries = 16;  // Q
  int64_t dim = 64;      // C
  int64_t heads = 4;
  int64_t layers = 2;    // R
  int64_t ffn_mult = 4;
};

// Query-driven distillation: R repeats of cross-attention over the encoder
// output, then self-attention among the queries, then a feed-forward block.
// Output is [B,Q,C] for any context length, so subjects with different voxel
// counts share one model.
class QFormer {
 public:
  QFormer() = default;
  QFormer(const QFormerConfig& cfg, Rng& rng);

  Tensor distill(const TokenSet& context) const;

  const QFormerConfig& config() const { return cfg_; }
  const QueryBank& bank() const { return bank_; }
  void params(ParamList& out, const std::string& prefix) const;

 private:
  QFormerConfig cfg_;
  QueryBank bank_;
  std::vector<QFormerLayer> layers_;
};

}  // namespace vxf
