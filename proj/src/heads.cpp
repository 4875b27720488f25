#include "voxelformer/heads.hpp"

namespace vxf {

PriorHead::PriorHead(const HeadsConfig& cfg, Rng& rng) : cfg_(cfg) {
  require(cfg.prior_layers >= 0, "PriorHead: layer count must be >= 0");
  require(cfg.target_tokens >= 1 && cfg.target_dim >= 1,
          "PriorHead: target shape must be positive");
  for (int64_t i = 0; i < cfg.prior_layers; ++i) {
    attn_.emplace_back(cfg.dim, cfg.heads, rng);
    ffn_.emplace_back(cfg.dim, cfg.ffn_mult, rng);
  }
  readout_ =
      Linear(cfg.queries * cfg.dim, cfg.target_tokens * cfg.target_dim, rng);
}

Tensor PriorHead::forward(const Tensor& q_out) const {
  require(q_out.rank() == 3 && q_out.dim(1) == cfg_.queries &&
              q_out.dim(2) == cfg_.dim,
          "PriorHead: expected [B," + std::to_string(cfg_.queries) + "," +
              std::to_string(cfg_.dim) + "], got " + shape_str(q_out.shape()));
  Tensor x = q_out;
  for (size_t i = 0; i < attn_.size(); ++i) {
    x = self_attention(x, attn_[i]).latents;
    x = ffn_[i].forward(x);
  }
  const int64_t b = x.dim(0);
  return readout_.forward(reshape(x, {b, cfg_.queries * cfg_.dim}));
}

void PriorHead::params(ParamList& out, const std::string& prefix) const {
  for (size_t i = 0; i < attn_.size(); ++i) {
    attn_[i].params(out, prefix + ".layer" + std::to_string(i) + ".attn");
    ffn_[i].params(out, prefix + ".layer" + std::to_string(i) + ".ffn");
  }
  readout_.params(out, prefix + ".readout");
}

ProjectorHead::ProjectorHead(const HeadsConfig& cfg, Rng& rng) : cfg_(cfg) {
  require(cfg.retrieval_dim >= 1 && cfg.projector_hidden >= 1,
          "ProjectorHead: dims must be positive");
  fc1_ = Linear(cfg.queries * cfg.dim, cfg.projector_hidden, rng);
  fc2_ = Linear(cfg.projector_hidden, cfg.retrieval_dim, rng);
}

Tensor ProjectorHead::forward(const Tensor& q_out) const {
  require(q_out.rank() == 3 && q_out.dim(1) == cfg_.queries &&
              q_out.dim(2) == cfg_.dim,
          "ProjectorHead: expected [B," + std::to_string(cfg_.queries) + "," +
              std::to_string(cfg_.dim) + "], got " + shape_str(q_out.shape()));
  const int64_t b = q_out.dim(0);
  Tensor x = reshape(q_out, {b, cfg_.queries * cfg_.dim});
  x = fc2_.forward(gelu(fc1_.forward(x)));
  return l2_normalize(x, 1);
}

void ProjectorHead::params(ParamList& out, const std::string& prefix) const {
  fc1_.params(out, prefix + ".fc1");
  fc2_.params(out, prefix + ".fc2");
}

}  // namespace vxf
