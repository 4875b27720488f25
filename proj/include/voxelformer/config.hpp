#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "voxelformer/data.hpp"
#include "voxelformer/model.hpp"

namespace vxf {

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  DataGenConfig data;  // used by `generate`; echoed for reference
  int64_t epochs = 30;
  int64_t batch_size = 32;
  double lambda_mse = 30.0;
  double lambda_contrastive = 1.0;
  double tau = 0.1;
  double mixup_alpha = 0.15;
  uint64_t seed = 1;
  std::string dataset_dir = "dataset";
  std::string checkpoint_path = "model.vxfc";
  std::string metrics_path = "metrics.jsonl";

  void validate() const;
  // startup feasibility: the merge schedule must leave room at every stage
  // for every subject (N_min - M*L >= 2M)
  void validate_against(const Dataset& ds) const;
};

// Flat `key = value` text with `#` comments. Unknown keys are rejected.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);
std::string config_to_text(const TrainConfig& cfg);

// Applies a single `key = value` override (same keys as the file format).
void apply_override(TrainConfig& cfg, const std::string& key,
                    const std::string& value);

}  // namespace vxf
