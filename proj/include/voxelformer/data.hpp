#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelformer/common.hpp"
#include "voxelformer/rng.hpp"

namespace vxf {

struct DataGenConfig {
  int64_t subjects = 3;
  int64_t train_stimuli = 600;
  int64_t test_stimuli = 100;
  std::vector<int64_t> voxel_counts = {64, 80, 96};  // cycled across subjects
  int64_t target_dim = 64;  // flattened T_t * D_t
  double noise_sigma = 0.05;
  uint64_t seed = 1;

  void validate() const;
};

// One subject's geometry and responses. Every subject sees every stimulus;
// samples are stored in ascending stimulus_id order.
struct SubjectData {
  int64_t subject_id = 0;
  int64_t voxel_count = 0;
  std::vector<double> coords;        // [N_s,3] in [-1,1]
  std::vector<uint32_t> stimulus_ids;
  std::vector<double> responses;     // [samples, N_s] row-major
  // generation-only (not serialized): responses = mixing * e_stim + noise
  std::vector<double> mixing;        // [N_s, target_dim]

  int64_t sample_count() const {
    return static_cast<int64_t>(stimulus_ids.size());
  }
  const double* response_row(int64_t i) const {
    return responses.data() + i * voxel_count;
  }
};

struct Dataset {
  DataGenConfig config;  // echo of the generating config
  std::vector<SubjectData> subjects;
  std::vector<double> targets;  // [stimulus_count, target_dim] unit rows
  int64_t stimulus_count = 0;

  bool is_train_stimulus(uint32_t stimulus_id) const {
    return static_cast<int64_t>(stimulus_id) < config.train_stimuli;
  }
  const double* target_row(uint32_t stimulus_id) const {
    return targets.data() + static_cast<int64_t>(stimulus_id) * config.target_dim;
  }
  int64_t min_voxel_count() const;
};

// Deterministic for a fixed seed: stimulus latents ~ N(0,I) with unit-norm
// targets, per-subject coords ~ U(-1,1)^3 and mixing ~ N(0, 1/sqrt(D)),
// responses = W_s . e_stim + N(0, sigma).
Dataset generate_dataset(const DataGenConfig& cfg);

// Directory layout: `manifest` (key = value text), per-subject
// `subject_<k>.bin` (magic VXF1, u32 N_s, u32 samples, u32 target_dim,
// f64 coords[N_s,3], then records of u32 stimulus_id + f64 responses[N_s]),
// and `targets.bin` (u32 count, u32 dim, f64 rows). All little-endian.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

enum class SplitMode { Train, Test };

struct Batch {
  int64_t subject_id = 0;
  int64_t size = 0;       // B
  int64_t voxel_count = 0;
  std::vector<double> responses;     // [B, N_s]
  std::vector<double> coords;        // [B, N_s, 3]
  std::vector<double> targets;       // [B, target_dim]
  std::vector<uint32_t> stimulus_ids;
};

// Subject-homogeneous mini-batches: every batch draws from one subject, so
// the token count is constant within a batch. Subjects round-robin; shuffle
// order is a pure function of (seed, epoch, subject).
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int64_t batch_size, SplitMode mode,
                uint64_t seed, int64_t epoch);
  bool next(Batch& out);

 private:
  const Dataset& ds_;
  int64_t batch_size_;
  std::vector<std::vector<int64_t>> order_;  // per subject, shuffled
  std::vector<int64_t> cursor_;
  size_t turn_ = 0;
};

struct OracleReport {
  double fwd_top1 = 0.0;
  double bwd_top1 = 0.0;
  std::vector<double> per_subject_fwd, per_subject_bwd;
};

// Ridge-regression solvability check: fits a linear map from responses to
// target embeddings on the train split and scores cosine top-1 retrieval on
// test pools. Confirms the synthetic task has a reachable optimum before the
// neural model trains on it.
OracleReport least_squares_oracle(const Dataset& ds, int64_t pool_size,
                                  int64_t trials, uint64_t seed);

}  // namespace vxf
