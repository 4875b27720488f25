#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "voxelformer/heads.hpp"
#include "voxelformer/losses.hpp"
#include "voxelformer/model.hpp"

using namespace vxf;

namespace {

TokenSet make_context(int64_t b, int64_t n, int64_t c, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(b * n * c));
  for (auto& x : v) x = rng.normal();
  TokenSet ts;
  ts.tokens = Tensor::leaf({b, n, c}, std::move(v), false);
  ts.sizes = Tensor::full({b, n}, 1.0);
  ts.count = n;
  return ts;
}

QFormerConfig small_qf() {
  QFormerConfig cfg;
  cfg.queries = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ffn_mult = 2;
  return cfg;
}

void randomize_outputs(ParamList& ps, Rng& rng) {
  for (auto& [name, t] : ps)
    if (name.find(".wo.weight") != std::string::npos ||
        name.find(".fc2.weight") != std::string::npos)
      for (auto& v : const_cast<Tensor&>(t).mutable_data())
        v = rng.normal(0.0, 0.2);
}

}  // namespace

TEST_CASE("distill keeps output shape constant across context lengths") {
  Rng rng(1);
  QFormer qf(small_qf(), rng);
  Rng drng(2);
  for (int64_t n : {48, 80}) {
    TokenSet ctx = make_context(3, n, 8, drng);
    CHECK(qf.distill(ctx).shape() == Shape{3, 4, 8});
  }
  // fixed-size contract over random context lengths
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 4 + drng.uniform_int(125);  // 4..128
    TokenSet ctx = make_context(2, n, 8, drng);
    CHECK(qf.distill(ctx).shape() == Shape{2, 4, 8});
  }
}

TEST_CASE("distill at init returns the broadcast query bank") {
  Rng rng(3);
  QFormer qf(small_qf(), rng);
  Rng drng(4);
  TokenSet ctx = make_context(2, 10, 8, drng);
  Tensor out = qf.distill(ctx);
  const auto& bank = qf.bank().queries.data();
  for (int64_t b = 0; b < 2; ++b)
    for (size_t i = 0; i < bank.size(); ++i)
      CHECK(out.data()[static_cast<size_t>(b) * bank.size() + i] == bank[i]);
}

TEST_CASE("distill is invariant to context permutation") {
  Rng rng(5);
  QFormer qf(small_qf(), rng);
  ParamList ps;
  qf.params(ps, "qf");
  Rng wrng(6);
  randomize_outputs(ps, wrng);
  Rng drng(7);
  TokenSet ctx = make_context(2, 12, 8, drng);
  Tensor base = qf.distill(ctx);
  TokenSet shuffled = ctx;
  shuffled.tokens = index_select(ctx.tokens, 1, Rng(8).permutation(12));
  Tensor permuted = qf.distill(shuffled);
  for (size_t i = 0; i < base.data().size(); ++i)
    CHECK(std::abs(base.data()[i] - permuted.data()[i]) < 1e-9);
}

TEST_CASE("distill rejects dim mismatch") {
  Rng rng(9);
  QFormer qf(small_qf(), rng);
  Rng drng(10);
  TokenSet ctx = make_context(1, 5, 6, drng);
  CHECK_THROWS_AS(qf.distill(ctx), validation_error);
}

TEST_CASE("prior head: zero read-out gives zero output; contract shapes") {
  HeadsConfig hc;
  hc.queries = 4;
  hc.dim = 8;
  hc.heads = 2;
  hc.prior_layers = 1;
  hc.ffn_mult = 2;
  hc.target_tokens = 1;
  hc.target_dim = 64;
  Rng rng(11);
  PriorHead prior(hc, rng);
  for (auto& v : prior.readout().weight.mutable_data()) v = 0.0;
  for (auto& v : prior.readout().bias.mutable_data()) v = 0.0;
  Rng drng(12);
  std::vector<double> qv(static_cast<size_t>(2 * 4 * 8));
  for (auto& x : qv) x = drng.normal();
  Tensor q_out = Tensor::leaf({2, 4, 8}, std::move(qv), false);
  Tensor out = prior.forward(q_out);
  CHECK(out.shape() == Shape{2, 64});  // T_t * D_t = 64
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("prior head passes the gradient oracle") {
  HeadsConfig hc;
  hc.queries = 3;
  hc.dim = 6;
  hc.heads = 2;
  hc.prior_layers = 1;
  hc.ffn_mult = 2;
  hc.target_tokens = 1;
  hc.target_dim = 5;
  Rng rng(13);
  PriorHead prior(hc, rng);
  ParamList ps;
  prior.params(ps, "prior");
  Rng wrng(14);
  randomize_outputs(ps, wrng);
  Tensor q_out = Tensor::leaf({2, 3, 6}, [] {
    Rng r(15);
    std::vector<double> v(36);
    for (auto& x : v) x = r.normal();
    return v;
  }(), true);
  Tensor w = Tensor::leaf({2, 5}, [] {
    Rng r(16);
    std::vector<double> v(10);
    for (auto& x : v) x = r.normal();
    return v;
  }(), false);
  auto fwd = [&] { return sum_all(mul(w, prior.forward(q_out))); };
  ParamList leaves{{"q_out", q_out}};
  for (auto& p : ps) leaves.push_back(p);
  auto res = vxf::test::gradcheck(fwd, leaves);
  CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
}

TEST_CASE("projector outputs unit-norm rows, deterministically") {
  HeadsConfig hc;
  hc.queries = 4;
  hc.dim = 8;
  hc.retrieval_dim = 16;
  hc.projector_hidden = 32;
  Rng rng(17);
  ProjectorHead proj(hc, rng);
  Rng drng(18);
  std::vector<double> qv(static_cast<size_t>(3 * 4 * 8));
  for (auto& x : qv) x = drng.normal();
  Tensor q_out = Tensor::leaf({3, 4, 8}, qv, false);
  Tensor out = proj.forward(q_out);
  CHECK(out.shape() == Shape{3, 16});
  for (int64_t r = 0; r < 3; ++r) {
    double ss = 0.0;
    for (int64_t j = 0; j < 16; ++j) {
      const double v = out.data()[static_cast<size_t>(r * 16 + j)];
      ss += v * v;
    }
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-9);
  }
  // determinism + self-cosine
  Tensor again = proj.forward(Tensor::leaf({3, 4, 8}, qv, false));
  CHECK(out.data() == again.data());
  double cos = 0.0;
  for (int64_t j = 0; j < 16; ++j)
    cos += out.data()[static_cast<size_t>(j)] * again.data()[static_cast<size_t>(j)];
  CHECK(std::abs(cos - 1.0) < 1e-12);
}

TEST_CASE("both heads backpropagate into shared encoder parameters") {
  // connectivity check away from the zero-initialized state: randomize the
  // residual output projections, then confirm each loss alone reaches ToMer
  ModelConfig mc;
  mc.dim = 8;
  mc.heads = 2;
  mc.stages = 1;
  mc.merges_per_stage = 1;
  mc.queries = 3;
  mc.qformer_layers = 1;
  mc.prior_layers = 1;
  mc.retrieval_dim = 6;
  mc.target_tokens = 1;
  mc.target_dim = 6;
  mc.ffn_mult = 2;
  mc.projector_hidden = 12;
  mc.pe_hidden = 4;
  VoxelFormer model(mc, 42);
  ParamList ps = model.parameters();
  Rng wrng(19);
  randomize_outputs(ps, wrng);

  Rng drng(20);
  const int64_t b = 3, n = 6;
  std::vector<double> resp(static_cast<size_t>(b * n));
  for (auto& v : resp) v = drng.normal();
  std::vector<double> coords(static_cast<size_t>(b * n * 3));
  for (auto& v : coords) v = drng.uniform(-1.0, 1.0);
  std::vector<double> tgt(static_cast<size_t>(b * 6));
  for (auto& v : tgt) v = drng.normal();
  Tensor responses = Tensor::leaf({b, n}, resp, false);
  Tensor coord_t = Tensor::leaf({b, n, 3}, coords, false);
  Tensor targets = Tensor::leaf({b, 6}, tgt, false);

  auto tomer_grad_norm = [&](const Tensor& loss) {
    for (auto& [name, t] : ps) const_cast<Tensor&>(t).zero_grad();
    backward(loss);
    double norm = 0.0;
    for (auto& [name, t] : ps)
      if (name.rfind("tomer", 0) == 0)
        for (double g : t.grad()) norm += g * g;
    return std::sqrt(norm);
  };

  {
    ForwardResult fwd = model.forward(responses, coord_t);
    CHECK(tomer_grad_norm(mse_loss(fwd.prior, targets)) > 1e-12);
  }
  {
    ForwardResult fwd = model.forward(responses, coord_t);
    Tensor rt = model.map_targets(targets);
    CHECK(tomer_grad_norm(softclip_loss(fwd.projection, rt, 0.5)) > 1e-12);
  }
}
