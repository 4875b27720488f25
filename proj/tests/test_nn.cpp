#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "voxelformer/nn.hpp"

using namespace vxf;

namespace {

Tensor random_leaf(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.normal();
  return Tensor::leaf(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("self-attention over a single token is trivially [[1.0]]") {
  Rng rng(5);
  AttentionBlock blk(8, 2, rng);
  Tensor x = random_leaf({1, 1, 8}, rng, false);
  AttentionOutput out = self_attention(x, blk);
  CHECK(out.attention.shape() == Shape{1, 2, 1, 1});
  for (double v : out.attention.data()) CHECK(v == 1.0);
  CHECK(out.latents.shape() == x.shape());
}

TEST_CASE("identical tokens attend uniformly") {
  Rng rng(6);
  AttentionBlock blk(8, 2, rng);
  const int64_t n = 5;
  std::vector<double> row(8);
  for (auto& v : row) v = rng.normal();
  std::vector<double> data;
  for (int64_t i = 0; i < n; ++i) data.insert(data.end(), row.begin(), row.end());
  Tensor x = Tensor::leaf({1, n, 8}, data);
  AttentionOutput out = self_attention(x, blk);
  for (double v : out.attention.data())
    CHECK(std::abs(v - 1.0 / n) < 1e-9);
}

TEST_CASE("attention matches an independent dense recomputation") {
  Rng rng(7);
  const int64_t b = 2, n = 5, c = 8, h = 2, hd = c / h;
  AttentionBlock blk(c, h, rng);
  Tensor x = random_leaf({b, n, c}, rng, false);
  AttentionOutput out = self_attention(x, blk);

  // brute-force path: layernorm, projections, per-head QK^T/sqrt(hd), softmax
  const auto& xv = x.data();
  const auto& gain = blk.norm_q.gain.data();
  const auto& bias = blk.norm_q.bias.data();
  auto project = [&](const Linear& lin, const std::vector<double>& in,
                     int64_t rows) {
    std::vector<double> out_(static_cast<size_t>(rows * c), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j) {
        double acc = lin.bias.data()[static_cast<size_t>(j)];
        for (int64_t k = 0; k < c; ++k)
          acc += in[static_cast<size_t>(r * c + k)] *
                 lin.weight.data()[static_cast<size_t>(k * c + j)];
        out_[static_cast<size_t>(r * c + j)] = acc;
      }
    return out_;
  };
  std::vector<double> xn(xv.size());
  for (int64_t r = 0; r < b * n; ++r) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < c; ++j) mean += xv[static_cast<size_t>(r * c + j)];
    mean /= c;
    for (int64_t j = 0; j < c; ++j) {
      const double d = xv[static_cast<size_t>(r * c + j)] - mean;
      var += d * d;
    }
    var /= c;
    for (int64_t j = 0; j < c; ++j)
      xn[static_cast<size_t>(r * c + j)] =
          gain[static_cast<size_t>(j)] *
              (xv[static_cast<size_t>(r * c + j)] - mean) / std::sqrt(var + 1e-5) +
          bias[static_cast<size_t>(j)];
  }
  const auto q = project(blk.wq, xn, b * n);
  const auto k = project(blk.wk, xn, b * n);
  const auto& attn = out.attention.data();
  double max_attn_err = 0.0;
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < h; ++hi)
      for (int64_t i = 0; i < n; ++i) {
        std::vector<double> scores(static_cast<size_t>(n));
        double mx = -1e300;
        for (int64_t j = 0; j < n; ++j) {
          double dot = 0;
          for (int64_t d = 0; d < hd; ++d)
            dot += q[static_cast<size_t>((bi * n + i) * c + hi * hd + d)] *
                   k[static_cast<size_t>((bi * n + j) * c + hi * hd + d)];
          scores[static_cast<size_t>(j)] = dot / std::sqrt(double(hd));
          mx = std::max(mx, scores[static_cast<size_t>(j)]);
        }
        double denom = 0;
        for (double s : scores) denom += std::exp(s - mx);
        double row_sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const double expect = std::exp(scores[static_cast<size_t>(j)] - mx) / denom;
          const double got = attn[static_cast<size_t>(
              ((bi * h + hi) * n + i) * n + j)];
          max_attn_err = std::max(max_attn_err, std::abs(expect - got));
          row_sum += got;
          CHECK(got >= 0.0);
          CHECK(got <= 1.0);
        }
        CHECK(std::abs(row_sum - 1.0) < 1e-6);
      }
  CHECK(max_attn_err < 1e-9);
}

TEST_CASE("zero-initialized output projections make blocks the identity") {
  Rng rng(8);
  AttentionBlock blk(16, 4, rng);
  Ffn ffn(16, 4, rng);
  Tensor x = random_leaf({2, 6, 16}, rng, false);
  CHECK(self_attention(x, blk).latents.data() == x.data());
  CHECK(cross_attention(x, x, blk).data() == x.data());
  CHECK(ffn.forward(x).data() == x.data());
}

TEST_CASE("cross-attention with one context token attends fully to it") {
  Rng rng(9);
  AttentionBlock blk(8, 2, rng);
  // make wo nonzero so attention output actually shows up
  for (auto& v : blk.wo.weight.mutable_data()) v = rng.normal(0.0, 0.1);
  Tensor q = random_leaf({1, 3, 8}, rng, false);
  Tensor ctx = random_leaf({1, 1, 8}, rng, false);
  Tensor out = cross_attention(q, ctx, blk);
  CHECK(out.shape() == Shape{1, 3, 8});
}

TEST_CASE("cross-attention is invariant to context permutation") {
  Rng rng(10);
  AttentionBlock blk(8, 2, rng);
  for (auto& v : blk.wo.weight.mutable_data()) v = rng.normal(0.0, 0.1);
  const int64_t n = 10;
  Tensor q = random_leaf({2, 4, 8}, rng, false);
  Tensor ctx = random_leaf({2, n, 8}, rng, false);
  Tensor base = cross_attention(q, ctx, blk);
  std::vector<int64_t> perm = Rng(77).permutation(n);
  Tensor shuffled = index_select(ctx, 1, perm);
  Tensor permuted = cross_attention(q, shuffled, blk);
  for (size_t i = 0; i < base.data().size(); ++i)
    CHECK(std::abs(base.data()[i] - permuted.data()[i]) < 1e-9);
}

TEST_CASE("cross-attention output shape is independent of context length") {
  Rng rng(11);
  AttentionBlock blk(8, 2, rng);
  Tensor q = random_leaf({3, 4, 8}, rng, false);
  for (int64_t n : {10, 100}) {
    Tensor ctx = random_leaf({3, n, 8}, rng, false);
    CHECK(cross_attention(q, ctx, blk).shape() == Shape{3, 4, 8});
  }
}

TEST_CASE("cross-attention rejects mismatched dims") {
  Rng rng(12);
  AttentionBlock blk(8, 2, rng);
  Tensor q = random_leaf({1, 2, 8}, rng, false);
  Tensor ctx = random_leaf({1, 3, 6}, rng, false);
  CHECK_THROWS_AS(cross_attention(q, ctx, blk), validation_error);
  Tensor x6 = random_leaf({1, 2, 6}, rng, false);
  CHECK_THROWS_AS(self_attention(x6, blk), validation_error);
}

TEST_CASE("ffn preserves shape for any N and passes the gradient oracle") {
  Rng rng(13);
  Ffn ffn(6, 2, rng);
  for (auto& v : ffn.fc2.weight.mutable_data()) v = rng.normal(0.0, 0.1);
  for (int64_t n : {1, 4, 9}) {
    Tensor x = random_leaf({2, n, 6}, rng, false);
    CHECK(ffn.forward(x).shape() == x.shape());
  }
  Tensor x = random_leaf({1, 3, 6}, rng, true);
  auto fwd = [&] {
    Tensor y = ffn.forward(x);
    return sum_all(mul(y, y));
  };
  ParamList leaves{{"x", x}};
  ffn.params(leaves, "ffn");
  auto res = vxf::test::gradcheck(fwd, leaves);
  CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("attention blocks pass the gradient oracle") {
  Rng rng(14);
  AttentionBlock blk(6, 2, rng);
  for (auto& v : blk.wo.weight.mutable_data()) v = rng.normal(0.0, 0.3);
  Tensor x = random_leaf({2, 4, 6}, rng, true);
  Tensor q = random_leaf({2, 3, 6}, rng, true);
  // linear read-out: keeps the loss free of a large constant offset that
  // would push finite differences into rounding noise
  Tensor wx = random_leaf({2, 4, 6}, rng, false);
  Tensor wq = random_leaf({2, 3, 6}, rng, false);
  {
    auto fwd = [&] {
      return sum_all(mul(wx, self_attention(x, blk).latents));
    };
    ParamList leaves{{"x", x}};
    blk.params(leaves, "blk");
    auto res = vxf::test::gradcheck(fwd, leaves);
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
  }
  {
    auto fwd = [&] {
      return sum_all(mul(wq, cross_attention(q, x, blk)));
    };
    ParamList leaves{{"q", q}, {"ctx", x}};
    blk.params(leaves, "blk");
    auto res = vxf::test::gradcheck(fwd, leaves);
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
  }
}
