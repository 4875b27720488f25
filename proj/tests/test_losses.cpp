#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "support/loss_oracle.hpp"
#include "voxelformer/losses.hpp"

using namespace vxf;

namespace {

// random rows on the unit sphere
std::vector<double> unit_rows(int64_t n, int64_t d, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double x = rng.normal();
      v[static_cast<size_t>(i * d + j)] = x;
      ss += x * x;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (int64_t j = 0; j < d; ++j) v[static_cast<size_t>(i * d + j)] *= inv;
  }
  return v;
}

}  // namespace

TEST_CASE("mse_loss hand values") {
  Tensor a = Tensor::leaf({1, 2}, {0, 0});
  Tensor b = Tensor::leaf({1, 2}, {3, 4});
  CHECK(mse_loss(a, b).item() == 25.0);
  CHECK(mse_loss(b, b).item() == 0.0);

  Tensor p = Tensor::leaf({2, 2}, {0, 0, 0, 0});
  Tensor t = Tensor::leaf({2, 2}, {3, 4, 3, 0});
  CHECK(mse_loss(p, t).item() == 17.0);  // (25 + 9) / 2

  Tensor wrong = Tensor::leaf({1, 3}, {0, 0, 0});
  CHECK_THROWS_AS(mse_loss(a, wrong), validation_error);
}

TEST_CASE("mixup degenerate and arithmetic cases") {
  Tensor z = Tensor::leaf({2, 1}, {2, 4});
  {
    MixupSpec spec;
    spec.lambdas = {1, 1};
    spec.partners = {1, 0};
    CHECK(mixup(z, spec).data() == z.data());
  }
  {
    MixupSpec spec;
    spec.lambdas = {0, 0};
    spec.partners = {1, 0};
    CHECK(mixup(z, spec).data() == std::vector<double>{4, 2});
  }
  {
    MixupSpec spec;
    spec.lambdas = {0.5, 1.0};
    spec.partners = {1, 0};
    CHECK(mixup(z, spec).data()[0] == 3.0);
  }
}

TEST_CASE("mixup spec validation") {
  Tensor z = Tensor::leaf({2, 1}, {1, 2});
  MixupSpec bad;
  bad.lambdas = {0.5, 1.5};
  bad.partners = {0, 1};
  CHECK_THROWS_AS(mixup(z, bad), validation_error);
  bad.lambdas = {0.5};
  CHECK_THROWS_AS(mixup(z, bad), validation_error);
}

TEST_CASE("bimixco at lambda=1 on an orthonormal pair reproduces 4(ln(1+e)-1)") {
  Tensor p = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  Tensor t = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  MixupSpec spec = MixupSpec::identity(2);
  const double loss = bimixco_loss(p, t, spec, 1.0).item();
  const double expect = 4.0 * (std::log(1.0 + std::exp(1.0)) - 1.0);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::abs(loss - 1.2533) < 1e-3);  // quoted rounded value
}

TEST_CASE("bimixco under perfect alignment decreases as tau shrinks") {
  Rng rng(2);
  auto rows = unit_rows(4, 8, rng);
  Tensor p = Tensor::leaf({4, 8}, rows);
  Tensor t = Tensor::leaf({4, 8}, rows);
  MixupSpec spec = MixupSpec::identity(4);
  double last = HUGE_VAL;
  for (double tau : {1.0, 0.1, 0.01}) {
    const double loss = bimixco_loss(p, t, spec, tau).item();
    CHECK(loss < last);
    CHECK(loss >= 0.0);
    last = loss;
  }
}

TEST_CASE("bimixco matches the naive double-loop oracle on random batches") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 2 + rng.uniform_int(7);  // 2..8
    const int64_t d = 3 + rng.uniform_int(6);
    auto pv = unit_rows(n, d, rng);
    auto tv = unit_rows(n, d, rng);
    MixupSpec spec = MixupSpec::draw(n, 0.15, rng);
    const double tau = 0.1 + rng.uniform() * 0.9;
    const double vec =
        bimixco_loss(Tensor::leaf({n, d}, pv), Tensor::leaf({n, d}, tv), spec, tau)
            .item();
    const double naive =
        vxf::test::naive_bimixco(pv, tv, n, d, spec.lambdas, spec.partners, tau);
    CHECK(std::abs(vec - naive) < 1e-9);
  }
}

TEST_CASE("bimixco at lambda=1 equals bidirectional InfoNCE within 1e-9") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 2 + rng.uniform_int(7);
    const int64_t d = 4;
    auto pv = unit_rows(n, d, rng);
    auto tv = unit_rows(n, d, rng);
    MixupSpec spec = MixupSpec::identity(n);
    const double vec =
        bimixco_loss(Tensor::leaf({n, d}, pv), Tensor::leaf({n, d}, tv), spec, 0.3)
            .item();
    const double nce =
        vxf::test::naive_infonce_bidirectional(pv, tv, n, d, 0.3);
    CHECK(std::abs(vec - nce) < 1e-9);
  }
}

TEST_CASE("bimixco rejects non-normalized rows") {
  Tensor p = Tensor::leaf({2, 2}, {2, 0, 0, 1});
  Tensor t = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  CHECK_THROWS_AS(bimixco_loss(p, t, MixupSpec::identity(2), 1.0),
                  validation_error);
}

TEST_CASE("bimixco gradient oracle") {
  Rng rng(5);
  const int64_t n = 4, d = 5;
  // keep leaves pre-normalization so perturbed points stay on-contract
  std::vector<double> raw(static_cast<size_t>(n * d));
  for (auto& v : raw) v = rng.normal();
  Tensor x = Tensor::leaf({n, d}, raw, true);
  Tensor t = Tensor::leaf({n, d}, unit_rows(n, d, rng), false);
  MixupSpec spec = MixupSpec::draw(n, 0.15, rng);
  auto fwd = [&] {
    return bimixco_loss(l2_normalize(x, 1), t, spec, 0.5);
  };
  auto res = vxf::test::gradcheck(fwd, {{"x", x}});
  CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("softclip hand value: p==t on an orthonormal pair gives 2H(q)") {
  Tensor p = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  Tensor t = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  const double loss = softclip_loss(p, t, 1.0).item();
  const double q0 = std::exp(1.0) / (std::exp(1.0) + 1.0);  // ~0.7311
  const double q1 = 1.0 - q0;                                // ~0.2689
  const double entropy = -q0 * std::log(q0) - q1 * std::log(q1);
  CHECK(loss == doctest::Approx(2.0 * entropy).epsilon(1e-12));
  CHECK(q0 == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(q1 == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("softclip matches the naive double-loop oracle on random batches") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 2 + rng.uniform_int(7);
    const int64_t d = 3 + rng.uniform_int(6);
    auto pv = unit_rows(n, d, rng);
    auto tv = unit_rows(n, d, rng);
    const double tau = 0.1 + rng.uniform() * 0.9;
    const double vec =
        softclip_loss(Tensor::leaf({n, d}, pv), Tensor::leaf({n, d}, tv), tau)
            .item();
    const double naive = vxf::test::naive_softclip(pv, tv, n, d, tau);
    CHECK(std::abs(vec - naive) < 1e-9);
  }
}

TEST_CASE("softclip target distribution rows sum to 1 within 1e-9") {
  Rng rng(7);
  const int64_t n = 6, d = 8;
  auto tv = unit_rows(n, d, rng);
  Tensor t = Tensor::leaf({n, d}, tv);
  Tensor q = softmax(mul_scalar(matmul(t, transpose(t, 0, 1)), 1.0 / 0.1), 1);
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += q.data()[static_cast<size_t>(i * n + j)];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("losses stay finite down to tau = 1e-3") {
  Rng rng(8);
  const int64_t n = 5, d = 6;
  auto pv = unit_rows(n, d, rng);
  auto tv = unit_rows(n, d, rng);
  Tensor p = Tensor::leaf({n, d}, pv);
  Tensor t = Tensor::leaf({n, d}, tv);
  for (double tau : {1.0, 0.1, 1e-2, 1e-3}) {
    CHECK(std::isfinite(bimixco_loss(p, t, MixupSpec::identity(n), tau).item()));
    CHECK(std::isfinite(softclip_loss(p, t, tau).item()));
  }
}

TEST_CASE("softclip gradient oracle") {
  Rng rng(9);
  const int64_t n = 4, d = 5;
  std::vector<double> raw(static_cast<size_t>(n * d));
  for (auto& v : raw) v = rng.normal();
  Tensor x = Tensor::leaf({n, d}, raw, true);
  Tensor t = Tensor::leaf({n, d}, unit_rows(n, d, rng), false);
  auto fwd = [&] { return softclip_loss(l2_normalize(x, 1), t, 0.5); };
  auto res = vxf::test::gradcheck(fwd, {{"x", x}});
  CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("total_loss weighted sum and linearity") {
  LossWeights paper;  // 30 / 1
  CHECK(total_loss(Tensor::scalar(0.5), Tensor::scalar(2.0), paper).item() ==
        17.0);
  CHECK(total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), paper).item() ==
        0.0);
  LossWeights mse_only{1.0, 1e-300, 0.1};
  CHECK(total_loss(Tensor::scalar(0.7), Tensor::scalar(5.0), mse_only).item() ==
        doctest::Approx(0.7));
  // homogeneity and additivity
  Rng rng(10);
  LossWeights w{3.0, 2.0, 0.1};
  for (int i = 0; i < 10; ++i) {
    const double a = rng.normal(), b = rng.normal(), s = rng.normal();
    const double f_ab =
        total_loss(Tensor::scalar(a), Tensor::scalar(b), w).item();
    const double f_scaled =
        total_loss(Tensor::scalar(s * a), Tensor::scalar(s * b), w).item();
    CHECK(f_scaled == doctest::Approx(s * f_ab).epsilon(1e-12));
    const double a2 = rng.normal(), b2 = rng.normal();
    const double f_sum =
        total_loss(Tensor::scalar(a + a2), Tensor::scalar(b + b2), w).item();
    const double f_parts =
        f_ab + total_loss(Tensor::scalar(a2), Tensor::scalar(b2), w).item();
    CHECK(f_sum == doctest::Approx(f_parts).epsilon(1e-12));
  }
}

TEST_CASE("phase schedule: floor(total/3) boundary") {
  for (int64_t e = 0; e <= 2; ++e)
    CHECK(phase_for_epoch(e, 9) == Phase::BiMixCo);
  for (int64_t e = 3; e <= 8; ++e)
    CHECK(phase_for_epoch(e, 9) == Phase::SoftCLIP);
  CHECK(phase_for_epoch(0, 1) == Phase::SoftCLIP);  // floor(1/3) = 0
  CHECK(phase_for_epoch(0, 3) == Phase::BiMixCo);
  CHECK(phase_for_epoch(1, 3) == Phase::SoftCLIP);
  CHECK_THROWS_AS(phase_for_epoch(9, 9), validation_error);
  CHECK_THROWS_AS(phase_for_epoch(-1, 9), validation_error);
}

TEST_CASE("mixup spec draw: lambdas in range, partners a permutation") {
  Rng rng(11);
  MixupSpec spec = MixupSpec::draw(16, 0.15, rng);
  spec.validate(16);
  std::vector<char> seen(16, 0);
  for (int64_t k : spec.partners) seen[static_cast<size_t>(k)] = 1;
  for (char c : seen) CHECK(c == 1);
}
