#pragma once

#include <functional>

#include "voxelformer/config.hpp"
#include "voxelformer/losses.hpp"
#include "voxelformer/model.hpp"

namespace vxf {

class Adam {
 public:
  Adam() = default;
  Adam(const OptimConfig& cfg, const ParamList& params);

  void step();       // applies accumulated grads, then advances t
  void zero_grad();
  uint64_t t() const { return t_; }

  // moments exposed for checkpointing, ordered like the param list
  std::vector<std::vector<double>>& m() { return m_; }
  std::vector<std::vector<double>>& v() { return v_; }
  void set_t(uint64_t t) { t_ = t; }

 private:
  OptimConfig cfg_;
  ParamList params_;
  std::vector<std::vector<double>> m_, v_;
  uint64_t t_ = 0;
};

struct EpochMetrics {
  int64_t epoch = 0;
  Phase phase = Phase::BiMixCo;
  double mse = 0.0;          // per-batch means over the epoch
  double contrastive = 0.0;
  double total = 0.0;
  int64_t batches = 0;
  double wall_time_s = 0.0;  // informational; excluded from determinism

  std::string to_json() const;  // one JSON object per line
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  int64_t final_epoch = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Two-phase schedule: BiMixCo epochs mix the raw voxel inputs and score
// Eq-style bidirectional InfoNCE; SoftCLIP epochs run unmixed. The MSE term
// stays on throughout. One Adam step per batch; checkpoint written every
// epoch when the config names a path. A non-finite loss aborts with a
// diagnostic naming the first non-finite tensor in the graph.
TrainResult train(const TrainConfig& cfg, const Dataset& ds, VoxelFormer& model,
                  const EpochCallback& on_epoch = nullptr,
                  bool write_checkpoints = true);

}  // namespace vxf
