#include "voxelformer/qformer.hpp"

namespace vxf {

QueryBank::QueryBank(int64_t q, int64_t c, Rng& rng) {
  require(q > 0 && c > 0, "QueryBank: Q and C must be positive");
  std::vector<double> v(static_cast<size_t>(q * c));
  for (auto& x : v) x = rng.normal(0.0, 0.02);
  queries = Tensor::leaf({q, c}, std::move(v), true);
}

QFormer::QFormer(const QFormerConfig& cfg, Rng& rng)
    : cfg_(cfg), bank_(cfg.queries, cfg.dim, rng) {
  require(cfg.layers >= 0, "QFormer: layer count must be >= 0");
  layers_.reserve(static_cast<size_t>(cfg.layers));
  for (int64_t i = 0; i < cfg.layers; ++i)
    layers_.push_back({AttentionBlock(cfg.dim, cfg.heads, rng),
                       AttentionBlock(cfg.dim, cfg.heads, rng),
                       Ffn(cfg.dim, cfg.ffn_mult, rng)});
}

Tensor QFormer::distill(const TokenSet& context) const {
  require(context.count >= 1, "QFormer::distill: empty context");
  require(context.tokens.dim(2) == cfg_.dim,
          "QFormer::distill: context dim " +
              std::to_string(context.tokens.dim(2)) +
              " does not match query dim " + std::to_string(cfg_.dim));
  const int64_t b = context.tokens.dim(0);
  Tensor x = expand_batch(bank_.queries, b);  // [B,Q,C]
  for (const auto& layer : layers_) {
    x = cross_attention(x, context.tokens, layer.cross);
    x = self_attention(x, layer.self).latents;
    x = layer.ffn.forward(x);
  }
  return x;
}

void QFormer::params(ParamList& out, const std::string& prefix) const {
  collect(out, prefix, ".queries", bank_.queries);
  for (size_t i = 0; i < layers_.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    layers_[i].cross.params(out, lp + ".cross");
    layers_[i].self.params(out, lp + ".self");
    layers_[i].ffn.params(out, lp + ".ffn");
  }
}

}  // namespace vxf
