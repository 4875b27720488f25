#include "voxelformer/trainer.hpp"

#include <chrono>
#include <cmath>

#include "voxelformer/checkpoint.hpp"

#include <nlohmann/json.hpp>

namespace vxf {

Adam::Adam(const OptimConfig& cfg, const ParamList& params)
    : cfg_(cfg), params_(params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.data().size(), 0.0);
    v_.emplace_back(t.data().size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi].second;
    auto& value = p.mutable_data();
    const auto& g = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
      if (cfg_.weight_decay > 0.0) upd += cfg_.weight_decay * value[i];
      value[i] -= cfg_.lr * upd;
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::string EpochMetrics::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["phase"] = phase_name(phase);
  j["mse"] = mse;
  j["contrastive"] = contrastive;
  j["total"] = total;
  j["batches"] = batches;
  j["wall_time_s"] = wall_time_s;
  return j.dump();
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                  VoxelFormer& model, const EpochCallback& on_epoch,
                  bool write_checkpoints) {
  cfg.validate();
  cfg.validate_against(ds);
  ParamList params = model.parameters();
  Adam adam(cfg.optim, params);
  Rng train_rng = Rng(cfg.seed).fork(0x7124);
  LossWeights weights{cfg.lambda_mse, cfg.lambda_contrastive, cfg.tau};
  weights.validate();

  TrainResult result;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const Phase phase = phase_for_epoch(epoch, cfg.epochs);
    EpochMetrics em;
    em.epoch = epoch;
    em.phase = phase;
    BatchIterator it(ds, cfg.batch_size, SplitMode::Train, cfg.seed, epoch);
    Rng mix_rng = train_rng.fork(static_cast<uint64_t>(epoch));
    Batch batch;
    while (it.next(batch)) {
      Tensor responses = Tensor::leaf({batch.size, batch.voxel_count},
                                      batch.responses, false);
      Tensor coords = Tensor::leaf({batch.size, batch.voxel_count, 3},
                                   batch.coords, false);
      Tensor targets = Tensor::leaf({batch.size, ds.config.target_dim},
                                    batch.targets, false);

      MixupSpec spec = phase == Phase::BiMixCo
                           ? MixupSpec::draw(batch.size, cfg.mixup_alpha, mix_rng)
                           : MixupSpec::identity(batch.size);
      Tensor inputs = phase == Phase::BiMixCo ? mixup(responses, spec)
                                              : responses;

      ForwardResult fwd = model.forward(inputs, coords);
      Tensor mse = mse_loss(fwd.prior, targets);
      Tensor retrieval_targets = model.map_targets(targets);
      // contrastive losses need at least two samples; a trailing batch of
      // one keeps only the MSE term
      Tensor contrastive;
      if (batch.size >= 2) {
        contrastive = phase == Phase::BiMixCo
                          ? bimixco_loss(fwd.projection, retrieval_targets,
                                         spec, cfg.tau)
                          : softclip_loss(fwd.projection, retrieval_targets,
                                          cfg.tau);
      } else {
        contrastive = Tensor::scalar(0.0);
      }
      if (!std::isfinite(mse.item()) || !std::isfinite(contrastive.item())) {
        const std::string where = first_nonfinite_description(
            std::isfinite(mse.item()) ? contrastive : mse);
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            " (first non-finite tensor: " + (where.empty() ? "loss" : where) +
            ")");
      }
      Tensor total = total_loss(mse, contrastive, weights);
      adam.zero_grad();
      backward(total);
      adam.step();

      em.mse += mse.item();
      em.contrastive += contrastive.item();
      em.total += total.item();
      ++em.batches;
    }
    em.mse /= static_cast<double>(em.batches);
    em.contrastive /= static_cast<double>(em.batches);
    em.total /= static_cast<double>(em.batches);
    em.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (write_checkpoints && !cfg.checkpoint_path.empty())
      save_checkpoint(cfg.checkpoint_path, cfg, model, &adam, epoch);
    if (on_epoch) on_epoch(em);
    result.metrics.push_back(em);
    result.final_epoch = epoch;
  }
  return result;
}

}  // namespace vxf
