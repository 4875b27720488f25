#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelformer/ops.hpp"
#include "voxelformer/rng.hpp"

namespace vxf {

// Per-sample mixing coefficients and partner indices for BiMixCo.
// Partners come from a uniform random permutation of the batch.
struct MixupSpec {
  std::vector<double> lambdas;   // each in [0,1]
  std::vector<int64_t> partners;
  double alpha = 0.15;

  static MixupSpec draw(int64_t batch, double alpha, Rng& rng);
  static MixupSpec identity(int64_t batch);  // lambda=1 everywhere
  void validate(int64_t batch) const;
};

struct LossWeights {
  double mse = 30.0;
  double contrastive = 1.0;
  double tau = 0.1;

  void validate() const;
};

// mean over the batch of the squared L2 distance (sum over feature dims)
Tensor mse_loss(const Tensor& prior, const Tensor& target);

// row i := lambda_i * z_i + (1 - lambda_i) * z_{k_i}; applied to raw model
// inputs so the mixed forward pass produces p*
Tensor mixup(const Tensor& z, const MixupSpec& spec);

// Bidirectional mixup-weighted InfoNCE. Sums (not means) over the batch.
// Rows of p_star and t must be unit-norm within 1e-6.
Tensor bimixco_loss(const Tensor& p_star, const Tensor& t,
                    const MixupSpec& spec, double tau);

// Soft cross-entropy between the prediction-vs-target similarity
// distribution and the target-vs-target one; the diagonal stays in both
// softmaxes. Sums over the batch.
Tensor softclip_loss(const Tensor& p, const Tensor& t, double tau);

// weighted total: w.mse * mse + w.contrastive * contrastive
Tensor total_loss(const Tensor& mse, const Tensor& contrastive,
                  const LossWeights& w);

enum class Phase { BiMixCo, SoftCLIP };

// BiMixCo for the first floor(total/3) epochs, SoftCLIP afterwards.
// The MSE term stays active in both phases.
Phase phase_for_epoch(int64_t epoch, int64_t total_epochs);

std::string phase_name(Phase p);

}  // namespace vxf
