#include "voxelformer/model.hpp"

#include <cmath>

namespace vxf {

void ModelConfig::validate() const {
  require(dim >= 1 && heads >= 1 && dim % heads == 0,
          "model config: dim must be positive and divisible by heads");
  require(stages >= 0 && merges_per_stage >= 0,
          "model config: stages and merges_per_stage must be >= 0");
  require(queries >= 1 && qformer_layers >= 0 && prior_layers >= 0,
          "model config: queries must be >= 1, layer counts >= 0");
  require(retrieval_dim >= 1 && target_tokens >= 1 && target_dim >= 1,
          "model config: embedding dims must be positive");
  require(retrieval_dim <= target_flat_dim(),
          "model config: retrieval_dim " + std::to_string(retrieval_dim) +
              " cannot exceed flattened target dim " +
              std::to_string(target_flat_dim()) +
              " (the frozen image-side map needs orthonormal columns)");
  require(ffn_mult >= 1 && projector_hidden >= 1 && pe_hidden >= 1,
          "model config: hidden sizes must be >= 1");
  require(pe_omega0 > 0.0, "model config: pe_omega0 must be positive");
}

namespace {

// random matrix with orthonormal columns via modified Gram-Schmidt
Tensor orthonormal_columns(int64_t rows, int64_t cols, Rng& rng) {
  std::vector<double> m(static_cast<size_t>(rows * cols));
  for (auto& v : m) v = rng.normal();
  for (int64_t c = 0; c < cols; ++c) {
    for (int64_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (int64_t r = 0; r < rows; ++r)
        dot += m[static_cast<size_t>(r * cols + c)] *
               m[static_cast<size_t>(r * cols + prev)];
      for (int64_t r = 0; r < rows; ++r)
        m[static_cast<size_t>(r * cols + c)] -=
            dot * m[static_cast<size_t>(r * cols + prev)];
    }
    double ss = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
      const double v = m[static_cast<size_t>(r * cols + c)];
      ss += v * v;
    }
    require(ss > 1e-20, "orthonormal_columns: degenerate column");
    const double inv = 1.0 / std::sqrt(ss);
    for (int64_t r = 0; r < rows; ++r)
      m[static_cast<size_t>(r * cols + c)] *= inv;
  }
  return Tensor::leaf({rows, cols}, std::move(m), false);
}

}  // namespace

VoxelFormer::VoxelFormer(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng master(seed);
  Rng tomer_rng = master.fork(1);
  TomerConfig tc;
  tc.dim = cfg.dim;
  tc.heads = cfg.heads;
  tc.stages = cfg.stages;
  tc.merges_per_stage = cfg.merges_per_stage;
  tc.pe_hidden = cfg.pe_hidden;
  tc.pe_omega0 = cfg.pe_omega0;
  tc.pe_mode = cfg.pe_mode;
  tc.pe_trainable = cfg.pe_trainable;
  tc.merge_metric = cfg.merge_metric;
  tomer_ = TomerEncoder(tc, tomer_rng);

  Rng qf_rng = master.fork(2);
  QFormerConfig qc;
  qc.queries = cfg.queries;
  qc.dim = cfg.dim;
  qc.heads = cfg.heads;
  qc.layers = cfg.qformer_layers;
  qc.ffn_mult = cfg.ffn_mult;
  qformer_ = QFormer(qc, qf_rng);

  HeadsConfig hc;
  hc.queries = cfg.queries;
  hc.dim = cfg.dim;
  hc.heads = cfg.heads;
  hc.prior_layers = cfg.prior_layers;
  hc.ffn_mult = cfg.ffn_mult;
  hc.target_tokens = cfg.target_tokens;
  hc.target_dim = cfg.target_dim;
  hc.retrieval_dim = cfg.retrieval_dim;
  hc.projector_hidden = cfg.projector_hidden;
  Rng prior_rng = master.fork(3);
  prior_ = PriorHead(hc, prior_rng);
  Rng proj_rng = master.fork(4);
  projector_ = ProjectorHead(hc, proj_rng);

  Rng map_rng = master.fork(5);
  retrieval_map_ =
      orthonormal_columns(cfg.target_flat_dim(), cfg.retrieval_dim, map_rng);
}

ForwardResult VoxelFormer::forward(
    const Tensor& responses, const Tensor& coords,
    const std::vector<StagePlans>* fixed_plans) const {
  ForwardResult out;
  out.encoded = tomer_.encode(responses, coords, fixed_plans);
  out.q_out = qformer_.distill(out.encoded.tokens);
  out.prior = prior_.forward(out.q_out);
  out.projection = projector_.forward(out.q_out);
  return out;
}

Tensor VoxelFormer::map_targets(const Tensor& targets) const {
  require(targets.rank() == 2 && targets.dim(1) == cfg_.target_flat_dim(),
          "map_targets: expected [B," + std::to_string(cfg_.target_flat_dim()) +
              "], got " + shape_str(targets.shape()));
  return l2_normalize(matmul(targets, retrieval_map_), 1);
}

ParamList VoxelFormer::parameters() const {
  ParamList out;
  tomer_.params(out, "tomer");
  qformer_.params(out, "qformer");
  prior_.params(out, "prior");
  projector_.params(out, "projector");
  // drop frozen entries (e.g. non-trainable positional embedding)
  ParamList trainable;
  for (auto& [name, t] : out)
    if (t.requires_grad()) trainable.emplace_back(name, t);
  return trainable;
}

ParamList VoxelFormer::buffers() const {
  ParamList out;
  out.emplace_back("retrieval_map", retrieval_map_);
  ParamList all;
  tomer_.params(all, "tomer");
  for (auto& [name, t] : all)
    if (!t.requires_grad()) out.emplace_back(name, t);
  return out;
}

ParamCount count_params(const ParamList& params) {
  ParamCount pc;
  for (const auto& [name, t] : params) {
    pc.total += t.numel();
    const auto dot = name.find('.');
    pc.by_module[name.substr(0, dot)] += t.numel();
  }
  return pc;
}

}  // namespace vxf
