#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelformer/rng.hpp"
#include "voxelformer/tensor.hpp"

namespace vxf {

// entry (i,j) = a_i . b_j / (|a_i||b_j|); errors name any zero-norm row
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

enum class Direction { Forward, Backward };

// Fraction of rows (Forward) or columns (Backward) whose diagonal entry
// ranks among the k largest, ties broken toward the lowest index.
// bwd(sim) == fwd(sim^T) exactly.
double topk_retrieval(const Tensor& sim, int64_t k, Direction dir);

struct PoolAccuracy {
  double fwd = 0.0;
  double bwd = 0.0;
};

// Shared trial loop over cached embeddings: each trial samples `pool_size`
// row indices without replacement, builds the cosine matrix between the two
// sides, and scores top-1 both ways. Rows of a and b correspond pairwise.
PoolAccuracy pooled_top1(const std::vector<double>& a,
                         const std::vector<double>& b, int64_t rows,
                         int64_t dim, int64_t pool_size, int64_t trials,
                         Rng& rng);

struct SubjectRetrieval {
  int64_t subject_id = 0;
  double fwd_top1 = 0.0;
  double bwd_top1 = 0.0;
};

struct RetrievalReport {
  int64_t pool_size = 0;
  int64_t trials = 0;
  uint64_t seed = 0;
  double fwd_top1 = 0.0;  // mean over subjects
  double bwd_top1 = 0.0;
  std::vector<SubjectRetrieval> per_subject;

  std::string to_json() const;
  std::string to_csv() const;  // subject_id,fwd_top1,bwd_top1,pool_size,trials
};

class VoxelFormer;
struct Dataset;

// Embeds every test sample once through the projector head, then runs seeded
// pool trials per subject. The image side uses the frozen retrieval-space
// targets (see VoxelFormer::map_targets).
RetrievalReport evaluate_retrieval(const VoxelFormer& model, const Dataset& ds,
                                   int64_t pool_size, int64_t trials,
                                   uint64_t seed);

}  // namespace vxf
