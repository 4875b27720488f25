#include "voxelformer/nn.hpp"

#include <cmath>

namespace vxf {

Linear::Linear(int64_t in, int64_t out, Rng& rng, double std, bool trainable) {
  std::vector<double> w(static_cast<size_t>(in * out));
  if (std > 0.0)
    for (auto& v : w) v = rng.normal(0.0, std);
  weight = Tensor::leaf({in, out}, std::move(w), trainable);
  bias = Tensor::zeros({out}, trainable);
}

LayerNorm::LayerNorm(int64_t dim, bool trainable) {
  gain = Tensor::full({dim}, 1.0, trainable);
  bias = Tensor::zeros({dim}, trainable);
}

AttentionBlock::AttentionBlock(int64_t dim_, int64_t heads_, Rng& rng)
    : heads(heads_), dim(dim_), norm_q(dim_), norm_kv(dim_) {
  require(dim > 0 && heads > 0, "AttentionBlock: dim and heads must be positive");
  require(dim % heads == 0,
          "AttentionBlock: dim " + std::to_string(dim) +
              " not divisible by heads " + std::to_string(heads));
  wq = Linear(dim, dim, rng);
  wk = Linear(dim, dim, rng);
  wv = Linear(dim, dim, rng);
  wo = Linear(dim, dim, rng, 0.0);  // zero: block starts as identity
}

void AttentionBlock::params(ParamList& out, const std::string& prefix) const {
  norm_q.params(out, prefix + ".norm_q");
  norm_kv.params(out, prefix + ".norm_kv");
  wq.params(out, prefix + ".wq");
  wk.params(out, prefix + ".wk");
  wv.params(out, prefix + ".wv");
  wo.params(out, prefix + ".wo");
}

namespace {

// [B,N,C] -> [B,H,N,hd]
Tensor split_heads(const Tensor& x, int64_t heads) {
  const int64_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  return transpose(reshape(x, {b, n, heads, c / heads}), 1, 2);
}

// [B,H,N,hd] -> [B,N,C]
Tensor merge_heads(const Tensor& x) {
  const int64_t b = x.dim(0), h = x.dim(1), n = x.dim(2), hd = x.dim(3);
  return reshape(transpose(x, 1, 2), {b, n, h * hd});
}

// attention core on pre-normalized inputs; returns residual-free output and
// the post-softmax attention tensor [B,H,Nq,Nk]
std::pair<Tensor, Tensor> attend(const Tensor& q_in, const Tensor& kv_in,
                                 const AttentionBlock& blk) {
  const int64_t hd = blk.dim / blk.heads;
  Tensor q = split_heads(blk.wq.forward(q_in), blk.heads);
  Tensor k = split_heads(blk.wk.forward(kv_in), blk.heads);
  Tensor v = split_heads(blk.wv.forward(kv_in), blk.heads);
  Tensor scores =
      mul_scalar(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(double(hd)));
  Tensor probs = softmax(scores, 3);
  Tensor ctx = merge_heads(matmul(probs, v));
  return {blk.wo.forward(ctx), probs};
}

}  // namespace

AttentionOutput self_attention(const Tensor& x, const AttentionBlock& block) {
  require(x.rank() == 3, "self_attention: input must be [B,N,C], got " +
                             shape_str(x.shape()));
  require(x.dim(2) == block.dim,
          "self_attention: input dim " + std::to_string(x.dim(2)) +
              " does not match block dim " + std::to_string(block.dim));
  Tensor xn = block.norm_q.forward(x);
  auto [attn_out, probs] = attend(xn, xn, block);
  return {add(x, attn_out), probs};
}

Tensor cross_attention(const Tensor& queries, const Tensor& context,
                       const AttentionBlock& block) {
  require(queries.rank() == 3 && context.rank() == 3,
          "cross_attention: inputs must be [B,Q,C] and [B,N,C], got " +
              shape_str(queries.shape()) + " and " + shape_str(context.shape()));
  require(queries.dim(2) == context.dim(2),
          "cross_attention: query dim " + std::to_string(queries.dim(2)) +
              " vs context dim " + std::to_string(context.dim(2)));
  require(queries.dim(2) == block.dim,
          "cross_attention: dim " + std::to_string(queries.dim(2)) +
              " does not match block dim " + std::to_string(block.dim));
  require(queries.dim(0) == context.dim(0),
          "cross_attention: batch mismatch " + shape_str(queries.shape()) +
              " vs " + shape_str(context.shape()));
  Tensor qn = block.norm_q.forward(queries);
  Tensor cn = block.norm_kv.forward(context);
  auto [attn_out, probs] = attend(qn, cn, block);
  (void)probs;
  return add(queries, attn_out);
}

Ffn::Ffn(int64_t dim, int64_t hidden_mult, Rng& rng) : norm(dim) {
  require(hidden_mult >= 1, "Ffn: hidden_mult must be >= 1");
  fc1 = Linear(dim, dim * hidden_mult, rng);
  fc2 = Linear(dim * hidden_mult, dim, rng, 0.0);
}

Tensor Ffn::forward(const Tensor& x) const {
  return add(x, fc2.forward(gelu(fc1.forward(norm.forward(x)))));
}

void Ffn::params(ParamList& out, const std::string& prefix) const {
  norm.params(out, prefix + ".norm");
  fc1.params(out, prefix + ".fc1");
  fc2.params(out, prefix + ".fc2");
}

}  // namespace vxf
