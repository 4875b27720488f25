#include "voxelformer/losses.hpp"

#include <cmath>

namespace vxf {

MixupSpec MixupSpec::draw(int64_t batch, double alpha, Rng& rng) {
  require(batch >= 1, "MixupSpec: batch must be >= 1");
  require(alpha > 0.0, "MixupSpec: alpha must be positive");
  MixupSpec spec;
  spec.alpha = alpha;
  spec.lambdas.reserve(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i)
    spec.lambdas.push_back(rng.beta(alpha, alpha));
  spec.partners = rng.permutation(batch);
  return spec;
}

MixupSpec MixupSpec::identity(int64_t batch) {
  MixupSpec spec;
  spec.lambdas.assign(static_cast<size_t>(batch), 1.0);
  spec.partners.resize(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i)
    spec.partners[static_cast<size_t>(i)] = i;
  return spec;
}

void MixupSpec::validate(int64_t batch) const {
  require(static_cast<int64_t>(lambdas.size()) == batch &&
              static_cast<int64_t>(partners.size()) == batch,
          "MixupSpec: spec length does not match batch size " +
              std::to_string(batch));
  for (double l : lambdas)
    require(l >= 0.0 && l <= 1.0,
            "MixupSpec: lambda " + std::to_string(l) + " outside [0,1]");
  for (int64_t k : partners)
    require(k >= 0 && k < batch,
            "MixupSpec: partner index " + std::to_string(k) + " out of range");
}

void LossWeights::validate() const {
  require(mse > 0.0 && contrastive > 0.0 && tau > 0.0,
          "LossWeights: all weights and tau must be positive");
}

Tensor mse_loss(const Tensor& prior, const Tensor& target) {
  require(prior.shape() == target.shape(),
          "mse_loss: shape mismatch " + shape_str(prior.shape()) + " vs " +
              shape_str(target.shape()));
  require(prior.rank() == 2, "mse_loss: expected [B,D], got " +
                                 shape_str(prior.shape()));
  const int64_t b = prior.dim(0);
  Tensor diff = sub(prior, target);
  return mul_scalar(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(b));
}

Tensor mixup(const Tensor& z, const MixupSpec& spec) {
  require(z.rank() == 2, "mixup: expected [B,D], got " + shape_str(z.shape()));
  const int64_t b = z.dim(0), d = z.dim(1);
  spec.validate(b);
  std::vector<double> lam(static_cast<size_t>(b * d));
  std::vector<double> lam_c(static_cast<size_t>(b * d));
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < d; ++j) {
      lam[static_cast<size_t>(i * d + j)] = spec.lambdas[static_cast<size_t>(i)];
      lam_c[static_cast<size_t>(i * d + j)] =
          1.0 - spec.lambdas[static_cast<size_t>(i)];
    }
  Tensor partners = index_select(z, 0, spec.partners);
  return add(mul(z, Tensor::leaf({b, d}, std::move(lam), false)),
             mul(partners, Tensor::leaf({b, d}, std::move(lam_c), false)));
}

namespace {

void check_unit_rows(const char* op, const Tensor& x) {
  require(x.rank() == 2, std::string(op) + ": expected [N,D], got " +
                             shape_str(x.shape()));
  const int64_t n = x.dim(0), d = x.dim(1);
  const auto& v = x.data();
  for (int64_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double e = v[static_cast<size_t>(i * d + j)];
      ss += e * e;
    }
    require(std::abs(std::sqrt(ss) - 1.0) < 1e-6,
            std::string(op) + ": row " + std::to_string(i) +
                " is not unit-norm (|row|=" + std::to_string(std::sqrt(ss)) +
                ")");
  }
}

}  // namespace

Tensor bimixco_loss(const Tensor& p_star, const Tensor& t,
                    const MixupSpec& spec, double tau) {
  check_unit_rows("bimixco_loss", p_star);
  check_unit_rows("bimixco_loss", t);
  require(p_star.shape() == t.shape(),
          "bimixco_loss: shape mismatch " + shape_str(p_star.shape()) +
              " vs " + shape_str(t.shape()));
  require(tau > 0.0, "bimixco_loss: tau must be positive");
  const int64_t n = p_star.dim(0);
  require(n >= 2, "bimixco_loss: batch must have N >= 2");
  spec.validate(n);

  Tensor sims = mul_scalar(matmul(p_star, transpose(t, 0, 1)), 1.0 / tau);
  Tensor lsm_rows = log_softmax(sims, 1);  // softmax over targets per p*
  Tensor lsm_cols = log_softmax(sims, 0);  // softmax over p* per target
  // Forward and backward terms share one coefficient matrix:
  // W[i,i] += lambda_i, W[i,k_i] += (1 - lambda_i).
  std::vector<double> w(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    w[static_cast<size_t>(i * n + i)] += spec.lambdas[static_cast<size_t>(i)];
    w[static_cast<size_t>(i * n + spec.partners[static_cast<size_t>(i)])] +=
        1.0 - spec.lambdas[static_cast<size_t>(i)];
  }
  Tensor weights = Tensor::leaf({n, n}, std::move(w), false);
  return neg(sum_all(mul(weights, add(lsm_rows, lsm_cols))));
}

Tensor softclip_loss(const Tensor& p, const Tensor& t, double tau) {
  check_unit_rows("softclip_loss", p);
  check_unit_rows("softclip_loss", t);
  require(p.shape() == t.shape(), "softclip_loss: shape mismatch " +
                                      shape_str(p.shape()) + " vs " +
                                      shape_str(t.shape()));
  require(tau > 0.0, "softclip_loss: tau must be positive");
  const int64_t n = p.dim(0);
  require(n >= 2, "softclip_loss: batch must have N >= 2");
  // target distribution: rows of softmax(t.t^T / tau); frozen, no gradient
  Tensor tt = mul_scalar(matmul(t, transpose(t, 0, 1)), 1.0 / tau);
  Tensor q = softmax(tt, 1);
  Tensor pred = log_softmax(mul_scalar(matmul(p, transpose(t, 0, 1)), 1.0 / tau), 1);
  return neg(sum_all(mul(q, pred)));
}

Tensor total_loss(const Tensor& mse, const Tensor& contrastive,
                  const LossWeights& w) {
  require(mse.numel() == 1 && contrastive.numel() == 1,
          "total_loss: inputs must be scalars");
  require(std::isfinite(mse.item()) && std::isfinite(contrastive.item()),
          "total_loss: non-finite input");
  return add(mul_scalar(mse, w.mse), mul_scalar(contrastive, w.contrastive));
}

Phase phase_for_epoch(int64_t epoch, int64_t total_epochs) {
  require(total_epochs >= 1, "phase_for_epoch: total_epochs must be >= 1");
  require(epoch >= 0 && epoch < total_epochs,
          "phase_for_epoch: epoch " + std::to_string(epoch) +
              " outside [0," + std::to_string(total_epochs) + ")");
  return epoch < total_epochs / 3 ? Phase::BiMixCo : Phase::SoftCLIP;
}

std::string phase_name(Phase p) {
  return p == Phase::BiMixCo ? "BiMixCo" : "SoftCLIP";
}

}  // namespace vxf
