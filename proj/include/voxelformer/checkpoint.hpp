#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "voxelformer/config.hpp"
#include "voxelformer/model.hpp"
#include "voxelformer/trainer.hpp"

namespace vxf {

// Little-endian binary, versioned: magic VXFC, u32 version, u32 epoch,
// u64 adam step, length-prefixed config echo, then named tensor sections
// (params, buffers, adam m, adam v). Tensor records are name-length-prefixed:
// u32 name length, bytes, u32 rank, u64 dims, f64 data.
void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     const VoxelFormer& model, const Adam* adam,
                     int64_t epoch);

struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<VoxelFormer> model;
  std::unique_ptr<Adam> adam;  // moments restored; null if absent
  int64_t epoch = 0;
};

// Rebuilds the model from the config echo and overwrites every named tensor;
// load(save(state)) reproduces forward outputs bitwise.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace vxf
