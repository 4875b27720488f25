#include "voxelformer/tomer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

namespace vxf {

CoordinatePE::CoordinatePE(int64_t out_dim_, int64_t hidden, double omega0_,
                           PeMode mode_, bool trainable, Rng& rng)
    : mode(mode_), out_dim(out_dim_), omega0(omega0_) {
  if (mode == PeMode::Siren) {
    require(hidden >= 1, "CoordinatePE: hidden must be >= 1");
    // SIREN. first layer U(-1/in, 1/in), later layers U(-sqrt(6/in)/w0, ..)
    std::vector<double> w1(static_cast<size_t>(3 * hidden));
    for (auto& v : w1) v = rng.uniform(-1.0 / 3.0, 1.0 / 3.0);
    l1.weight = Tensor::leaf({3, hidden}, std::move(w1), trainable);
    l1.bias = Tensor::zeros({hidden}, trainable);
    const double bound = std::sqrt(6.0 / static_cast<double>(hidden)) / omega0;
    std::vector<double> w2(static_cast<size_t>(hidden * out_dim));
    for (auto& v : w2) v = rng.uniform(-bound, bound);
    l2.weight = Tensor::leaf({hidden, out_dim}, std::move(w2), trainable);
    l2.bias = Tensor::zeros({out_dim}, trainable);
  }
}

Tensor CoordinatePE::forward(const Tensor& coords) const {
  require(coords.rank() == 3 && coords.dim(2) == 3,
          "CoordinatePE: coords must be [B,N,3], got " +
              shape_str(coords.shape()));
  const int64_t b = coords.dim(0), n = coords.dim(1);
  if (mode == PeMode::Siren) {
    Tensor flat = reshape(coords, {b * n, 3});
    Tensor h = sin_t(mul_scalar(l1.forward(flat), omega0));
    return reshape(l2.forward(h), {b, n, out_dim});
  }
  // Fixed sinusoidal features: per axis, frequency-doubled sin/cos bands,
  // zero-padded up to C. No trainable state.
  const auto& cv = coords.data();
  std::vector<double> out(static_cast<size_t>(b * n * out_dim), 0.0);
  const int64_t bands = out_dim / 6;
  for (int64_t i = 0; i < b * n; ++i) {
    double* row = out.data() + i * out_dim;
    int64_t f = 0;
    for (int64_t axis = 0; axis < 3 && f < out_dim; ++axis) {
      const double c = cv[static_cast<size_t>(i * 3 + axis)];
      for (int64_t k = 0; k < bands && f + 1 < out_dim; ++k) {
        const double arg = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k)) * c;
        row[f++] = std::sin(arg);
        row[f++] = std::cos(arg);
      }
    }
  }
  return Tensor::leaf({b, n, out_dim}, std::move(out), false);
}

void CoordinatePE::params(ParamList& out, const std::string& prefix) const {
  if (mode == PeMode::Siren) {
    l1.params(out, prefix + ".l1");
    l2.params(out, prefix + ".l2");
  }
}

// ---------------------------------------------------------------------------

TomerEncoder::TomerEncoder(const TomerConfig& cfg, Rng& rng) : cfg_(cfg) {
  require(cfg.dim > 0 && cfg.heads > 0, "TomerEncoder: dim/heads must be positive");
  require(cfg.dim % cfg.heads == 0, "TomerEncoder: dim must be divisible by heads");
  require(cfg.stages >= 0, "TomerEncoder: stages must be >= 0");
  require(cfg.merges_per_stage >= 0,
          "TomerEncoder: merges_per_stage must be >= 0");
  tokenizer_ = Linear(1, cfg.dim, rng);
  pe_ = CoordinatePE(cfg.dim, cfg.pe_hidden, cfg.pe_omega0, cfg.pe_mode,
                     cfg.pe_trainable, rng);
  blocks_.reserve(static_cast<size_t>(cfg.stages));
  for (int64_t i = 0; i < cfg.stages; ++i)
    blocks_.emplace_back(cfg.dim, cfg.heads, rng);
}

TokenSet TomerEncoder::tokenize(const Tensor& responses,
                                const Tensor& coords) const {
  require(responses.rank() == 2, "tokenize: responses must be [B,N], got " +
                                     shape_str(responses.shape()));
  require(coords.rank() == 3 && coords.dim(2) == 3,
          "tokenize: coords must be [B,N,3], got " + shape_str(coords.shape()));
  const int64_t b = responses.dim(0), n = responses.dim(1);
  require(coords.dim(0) == b && coords.dim(1) == n,
          "tokenize: responses " + shape_str(responses.shape()) +
              " and coords " + shape_str(coords.shape()) + " disagree");
  for (double c : coords.data())
    require(c >= -1.0 && c <= 1.0,
            "tokenize: coords must be normalized to [-1,1]; got " +
                std::to_string(c));
  // a 1x1 convolution over voxels == a shared linear map per scalar response
  Tensor tok = reshape(tokenizer_.forward(reshape(responses, {b * n, 1})),
                       {b, n, cfg_.dim});
  TokenSet ts;
  ts.tokens = add(tok, pe_.forward(coords));
  ts.sizes = Tensor::full({b, n}, 1.0, false);
  ts.count = n;
  return ts;
}

namespace {

// head-averaged attention values for planning (plain data; the plan is a
// discrete decision and carries no gradients)
std::vector<double> head_average(const Tensor& probs) {
  const int64_t b = probs.dim(0), h = probs.dim(1), n = probs.dim(2);
  std::vector<double> avg(static_cast<size_t>(b * n * n), 0.0);
  const auto& p = probs.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < h; ++hi) {
      const double* src = p.data() + ((bi * h + hi) * n * n);
      double* dst = avg.data() + bi * n * n;
      for (int64_t i = 0; i < n * n; ++i) dst[i] += src[i];
    }
  const double inv = 1.0 / static_cast<double>(h);
  for (auto& v : avg) v *= inv;
  return avg;
}

MergePlan plan_one(const double* sim_lookup, int64_t n, int64_t m,
                   const std::vector<int64_t>& a_set,
                   const std::vector<int64_t>& b_set) {
  auto sim = [&](int64_t a, int64_t b) {
    return sim_lookup[a * n + b] + sim_lookup[b * n + a];
  };
  // Each proposer's candidate is its best unused destination. Highest offer
  // wins; losers whose destination was taken re-propose. Ties break toward
  // the lowest (src,dst) pair so plans are deterministic.
  struct Offer {
    double score;
    int64_t src, dst;
    bool operator<(const Offer& o) const {
      if (score != o.score) return score < o.score;
      if (src != o.src) return src > o.src;
      return dst > o.dst;
    }
  };
  std::vector<char> dst_used(static_cast<size_t>(n), 0);
  // b_set ascends, so replacing only on strictly-greater keeps the lowest
  // destination index on ties
  auto best_for = [&](int64_t a) -> Offer {
    Offer best{-HUGE_VAL, a, -1};
    for (int64_t b : b_set) {
      if (dst_used[static_cast<size_t>(b)]) continue;
      const double s = sim(a, b);
      if (best.dst < 0 || s > best.score) best = Offer{s, a, b};
    }
    return best;
  };
  std::priority_queue<Offer> heap;
  for (int64_t a : a_set) {
    Offer o = best_for(a);
    if (o.dst >= 0) heap.push(o);
  }
  MergePlan plan;
  plan.pairs.reserve(static_cast<size_t>(m));
  while (static_cast<int64_t>(plan.pairs.size()) < m && !heap.empty()) {
    Offer o = heap.top();
    heap.pop();
    if (dst_used[static_cast<size_t>(o.dst)]) {
      Offer re = best_for(o.src);
      if (re.dst >= 0) heap.push(re);
      continue;
    }
    dst_used[static_cast<size_t>(o.dst)] = 1;
    plan.pairs.push_back({o.src, o.dst, o.score});
  }
  require(static_cast<int64_t>(plan.pairs.size()) == m,
          "plan_merge: could not assemble " + std::to_string(m) + " pairs");
  return plan;
}

}  // namespace

StagePlans plan_merge(const Tensor& attn_avg, int64_t m) {
  require(attn_avg.rank() == 3 && attn_avg.dim(1) == attn_avg.dim(2),
          "plan_merge: attention must be [B,N,N], got " +
              shape_str(attn_avg.shape()));
  require(m >= 0, "plan_merge: merge count must be >= 0");
  const int64_t b = attn_avg.dim(0), n = attn_avg.dim(1);
  require(2 * m <= n, "plan_merge: capacity exceeded, 2M=" +
                          std::to_string(2 * m) + " > N=" + std::to_string(n));
  const auto& av = attn_avg.data();
  for (int64_t bi = 0; bi < b && n > 0; ++bi)
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j)
        s += av[static_cast<size_t>((bi * n + i) * n + j)];
      require(std::abs(s - 1.0) < 1e-6,
              "plan_merge: attention row " + std::to_string(i) +
                  " does not sum to 1 (got " + std::to_string(s) + ")");
    }
  std::vector<int64_t> a_set, b_set;
  for (int64_t i = 0; i < n; i += 2) a_set.push_back(i);
  for (int64_t i = 1; i < n; i += 2) b_set.push_back(i);
  StagePlans plans;
  plans.reserve(static_cast<size_t>(b));
  for (int64_t bi = 0; bi < b; ++bi)
    plans.push_back(plan_one(av.data() + bi * n * n, n, m, a_set, b_set));
  return plans;
}

TokenSet apply_merge(const TokenSet& ts, const StagePlans& plans) {
  const int64_t b = ts.tokens.dim(0), n = ts.tokens.dim(1);
  require(static_cast<int64_t>(plans.size()) == b,
          "apply_merge: expected " + std::to_string(b) + " plans, got " +
              std::to_string(plans.size()));
  const int64_t m = static_cast<int64_t>(plans[0].pairs.size());
  for (const auto& p : plans) {
    require(static_cast<int64_t>(p.pairs.size()) == m,
            "apply_merge: plans must merge the same count in every batch row");
    std::vector<char> used(static_cast<size_t>(n), 0);
    for (const auto& pr : p.pairs) {
      require(pr.src >= 0 && pr.src < n && pr.dst >= 0 && pr.dst < n,
              "apply_merge: pair index out of range");
      require(!used[static_cast<size_t>(pr.src)] &&
                  !used[static_cast<size_t>(pr.dst)] && pr.src != pr.dst,
              "apply_merge: duplicate index in merge plan");
      used[static_cast<size_t>(pr.src)] = used[static_cast<size_t>(pr.dst)] = 1;
    }
  }
  if (m == 0) return ts;

  const int64_t n_new = n - m;
  const auto& sv = ts.sizes.data();
  // Constant per-sample merge matrices [B,n_new,n]: survivor rows are unit
  // rows; a destination row holds the two size fractions. Applying them with
  // matmul routes gradients to both merged tokens at those weights.
  std::vector<double> mm(static_cast<size_t>(b * n_new * n), 0.0);
  std::vector<double> new_sizes(static_cast<size_t>(b * n_new), 0.0);
  for (int64_t bi = 0; bi < b; ++bi) {
    std::vector<int64_t> src_of_dst(static_cast<size_t>(n), -1);
    std::vector<char> removed(static_cast<size_t>(n), 0);
    for (const auto& pr : plans[static_cast<size_t>(bi)].pairs) {
      src_of_dst[static_cast<size_t>(pr.dst)] = pr.src;
      removed[static_cast<size_t>(pr.src)] = 1;
    }
    int64_t row = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (removed[static_cast<size_t>(j)]) continue;
      double* mrow = mm.data() + (bi * n_new + row) * n;
      const double s_dst = sv[static_cast<size_t>(bi * n + j)];
      const int64_t src = src_of_dst[static_cast<size_t>(j)];
      if (src < 0) {
        mrow[j] = 1.0;
        new_sizes[static_cast<size_t>(bi * n_new + row)] = s_dst;
      } else {
        const double s_src = sv[static_cast<size_t>(bi * n + src)];
        const double total = s_dst + s_src;
        mrow[j] = s_dst / total;
        mrow[src] = s_src / total;
        new_sizes[static_cast<size_t>(bi * n_new + row)] = s_dst + s_src;
      }
      ++row;
    }
  }
  Tensor merge_mat = Tensor::leaf({b, n_new, n}, std::move(mm), false);
  TokenSet out;
  out.tokens = matmul(merge_mat, ts.tokens);
  out.sizes = Tensor::leaf({b, n_new}, std::move(new_sizes), false);
  out.count = n_new;
  return out;
}

namespace {

// key-feature cosine similarity lookup, shaped like an attention matrix so
// plan_one can consume either metric
std::vector<double> key_cosine_lookup(const Tensor& x,
                                      const AttentionBlock& blk) {
  Tensor keys = blk.wk.forward(blk.norm_q.forward(x));
  const int64_t b = keys.dim(0), n = keys.dim(1), c = keys.dim(2);
  const auto& kv = keys.data();
  std::vector<double> sim(static_cast<size_t>(b * n * n), 0.0);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double* a = kv.data() + (bi * n + i) * c;
        const double* bb = kv.data() + (bi * n + j) * c;
        double dot = 0, na = 0, nb = 0;
        for (int64_t d = 0; d < c; ++d) {
          dot += a[d] * bb[d];
          na += a[d] * a[d];
          nb += bb[d] * bb[d];
        }
        // halved so that sim(a,b)+sim(b,a) equals the plain cosine
        sim[static_cast<size_t>((bi * n + i) * n + j)] =
            0.5 * dot / std::sqrt(na * nb + 1e-30);
      }
  return sim;
}

}  // namespace

EncodeResult TomerEncoder::encode(
    const Tensor& responses, const Tensor& coords,
    const std::vector<StagePlans>* fixed_plans) const {
  const int64_t n0 = responses.dim(1);
  const int64_t final_n = n0 - cfg_.merges_per_stage * cfg_.stages;
  require(final_n >= 1, "encode: merge schedule exhausts tokens, N=" +
                            std::to_string(n0) + " M=" +
                            std::to_string(cfg_.merges_per_stage) + " L=" +
                            std::to_string(cfg_.stages));
  if (fixed_plans)
    require(static_cast<int64_t>(fixed_plans->size()) == cfg_.stages,
            "encode: fixed plan count does not match stage count");
  EncodeResult res;
  TokenSet ts = tokenize(responses, coords);
  for (int64_t stage = 0; stage < cfg_.stages; ++stage) {
    const auto& blk = blocks_[static_cast<size_t>(stage)];
    AttentionOutput ao = self_attention(ts.tokens, blk);
    ts.tokens = ao.latents;
    res.stage_attention.push_back(ao.attention);
    StagePlans plans;
    if (fixed_plans) {
      plans = (*fixed_plans)[static_cast<size_t>(stage)];
    } else if (cfg_.merge_metric == MergeMetric::Attention) {
      const int64_t b = ao.attention.dim(0), n = ao.attention.dim(2);
      Tensor avg = Tensor::leaf({b, n, n}, head_average(ao.attention), false);
      plans = plan_merge(avg, cfg_.merges_per_stage);
    } else {
      const int64_t b = ts.tokens.dim(0), n = ts.tokens.dim(1);
      require(2 * cfg_.merges_per_stage <= n,
              "encode: merge capacity exceeded at stage " +
                  std::to_string(stage));
      std::vector<double> sim = key_cosine_lookup(ts.tokens, blk);
      std::vector<int64_t> a_set, b_set;
      for (int64_t i = 0; i < n; i += 2) a_set.push_back(i);
      for (int64_t i = 1; i < n; i += 2) b_set.push_back(i);
      for (int64_t bi = 0; bi < b; ++bi)
        plans.push_back(plan_one(sim.data() + bi * n * n, n,
                                 cfg_.merges_per_stage, a_set, b_set));
    }
    ts = apply_merge(ts, plans);
    res.plans.push_back(std::move(plans));
  }
  res.tokens = std::move(ts);
  return res;
}

void TomerEncoder::params(ParamList& out, const std::string& prefix) const {
  tokenizer_.params(out, prefix + ".tokenizer");
  pe_.params(out, prefix + ".pe");
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].params(out, prefix + ".stage" + std::to_string(i) + ".attn");
}

}  // namespace vxf
