#pragma once

// Naive reference implementations of the contrastive losses: direct
// double-loop transcriptions with scalar std::exp, sharing nothing with the
// vectorized graph path.

#include <cmath>
#include <vector>

#include "voxelformer/losses.hpp"

namespace vxf::test {

inline double naive_bimixco(const std::vector<double>& p,
                            const std::vector<double>& t, int64_t n, int64_t d,
                            const std::vector<double>& lambdas,
                            const std::vector<int64_t>& partners, double tau) {
  auto dot = [&](const std::vector<double>& a, int64_t i,
                 const std::vector<double>& b, int64_t j) {
    double s = 0.0;
    for (int64_t k = 0; k < d; ++k)
      s += a[static_cast<size_t>(i * d + k)] * b[static_cast<size_t>(j * d + k)];
    return s;
  };
  double loss = 0.0;
  // forward term: softmax over targets for each p*_i
  for (int64_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int64_t m = 0; m < n; ++m) denom += std::exp(dot(p, i, t, m) / tau);
    loss -= lambdas[static_cast<size_t>(i)] *
            std::log(std::exp(dot(p, i, t, i) / tau) / denom);
    loss -= (1.0 - lambdas[static_cast<size_t>(i)]) *
            std::log(std::exp(dot(p, i, t, partners[static_cast<size_t>(i)]) / tau) /
                     denom);
  }
  // backward term: softmax over p*_m for each target t_j
  for (int64_t j = 0; j < n; ++j) {
    double denom = 0.0;
    for (int64_t m = 0; m < n; ++m) denom += std::exp(dot(p, m, t, j) / tau);
    loss -= lambdas[static_cast<size_t>(j)] *
            std::log(std::exp(dot(p, j, t, j) / tau) / denom);
    for (int64_t l = 0; l < n; ++l)
      if (partners[static_cast<size_t>(l)] == j)
        loss -= (1.0 - lambdas[static_cast<size_t>(l)]) *
                std::log(std::exp(dot(p, l, t, j) / tau) / denom);
  }
  return loss;
}

inline double naive_softclip(const std::vector<double>& p,
                             const std::vector<double>& t, int64_t n,
                             int64_t d, double tau) {
  auto dot = [&](const std::vector<double>& a, int64_t i,
                 const std::vector<double>& b, int64_t j) {
    double s = 0.0;
    for (int64_t k = 0; k < d; ++k)
      s += a[static_cast<size_t>(i * d + k)] * b[static_cast<size_t>(j * d + k)];
    return s;
  };
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double tdenom = 0.0, pdenom = 0.0;
    for (int64_t m = 0; m < n; ++m) {
      tdenom += std::exp(dot(t, i, t, m) / tau);
      pdenom += std::exp(dot(p, i, t, m) / tau);
    }
    for (int64_t j = 0; j < n; ++j) {
      const double q = std::exp(dot(t, i, t, j) / tau) / tdenom;
      const double lp = std::log(std::exp(dot(p, i, t, j) / tau) / pdenom);
      loss -= q * lp;
    }
  }
  return loss;
}

// plain bidirectional InfoNCE (diagonal labels, sums over the batch);
// written out on its own so the lambda=1 equivalence check does not lean on
// the BiMixCo transcription above
inline double naive_infonce_bidirectional(const std::vector<double>& p,
                                          const std::vector<double>& t,
                                          int64_t n, int64_t d, double tau) {
  auto dot = [&](int64_t i, int64_t j) {
    double s = 0.0;
    for (int64_t k = 0; k < d; ++k)
      s += p[static_cast<size_t>(i * d + k)] * t[static_cast<size_t>(j * d + k)];
    return s;
  };
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double row_denom = 0.0, col_denom = 0.0;
    for (int64_t m = 0; m < n; ++m) {
      row_denom += std::exp(dot(i, m) / tau);
      col_denom += std::exp(dot(m, i) / tau);
    }
    loss += -std::log(std::exp(dot(i, i) / tau) / row_denom) -
            std::log(std::exp(dot(i, i) / tau) / col_denom);
  }
  return loss;
}

}  // namespace vxf::test
