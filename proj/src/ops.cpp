#include "voxelformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vxf {

uint64_t next_seq();  // tensor.cpp

namespace {

std::shared_ptr<TensorNode> fresh(const char* op, Shape shape,
                                  std::vector<Tensor> parents) {
  auto n = std::make_shared<TensorNode>();
  n->op = op;
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(numel_of(n->shape)));
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
    n->parents.push_back(p.node());
  }
  n->seq = next_seq();
  return n;
}

// Accumulate helper: skips parents that don't track gradients.
inline std::vector<double>* grad_of(const std::shared_ptr<TensorNode>& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
}

int norm_axis(const char* op, const Tensor& a, int axis) {
  int r = a.rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r,
          std::string(op) + ": axis out of range for shape " +
              shape_str(a.shape()));
  return axis;
}

struct AxisSplit {
  int64_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
    sp.inner *= s[i];
  return sp;
}

template <class Fwd, class Bwd>
Tensor unary_op(const char* op, const Tensor& a, Fwd f, Bwd dfdx) {
  auto n = fresh(op, a.shape(), {a});
  const auto& x = a.data();
  for (size_t i = 0; i < x.size(); ++i) n->value[i] = f(x[i]);
  if (n->requires_grad) {
    auto pa = a.node();
    TensorNode* out = n.get();
    n->backprop = [out, pa, dfdx]() {
      auto* g = grad_of(pa);
      if (!g) return;
      for (size_t i = 0; i < out->grad.size(); ++i)
        (*g)[i] += out->grad[i] * dfdx(pa->value[i], out->value[i]);
    };
  }
  return Tensor::wrap(n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  auto n = fresh("add", a.shape(), {a, b});
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < x.size(); ++i) n->value[i] = x[i] + y[i];
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    TensorNode* out = n.get();
    n->backprop = [out, pa, pb]() {
      if (auto* g = grad_of(pa))
        for (size_t i = 0; i < out->grad.size(); ++i) (*g)[i] += out->grad[i];
      if (auto* g = grad_of(pb))
        for (size_t i = 0; i < out->grad.size(); ++i) (*g)[i] += out->grad[i];
    };
  }
  return Tensor::wrap(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  auto n = fresh("sub", a.shape(), {a, b});
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < x.size(); ++i) n->value[i] = x[i] - y[i];
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    TensorNode* out = n.get();
    n->backprop = [out, pa, pb]() {
      if (auto* g = grad_of(pa))
        for (size_t i = 0; i < out->grad.size(); ++i) (*g)[i] += out->grad[i];
      if (auto* g = grad_of(pb))
        for (size_t i = 0; i < out->grad.size(); ++i) (*g)[i] -= out->grad[i];
    };
  }
  return Tensor::wrap(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  auto n = fresh("mul", a.shape(), {a, b});
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < x.size(); ++i) n->value[i] = x[i] * y[i];
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    TensorNode* out = n.get();
    n->backprop = [out, pa, pb]() {
      if (auto* g = grad_of(pa))
        for (size_t i = 0; i < out->grad.size(); ++i)
          (*g)[i] += out->grad[i] * pb->value[i];
      if (auto* g = grad_of(pb))
        for (size_t i = 0; i < out->grad.size(); ++i)
          (*g)[i] += out->grad[i] * pa->value[i];
    };
  }
  return Tensor::wrap(n);
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      "add_scalar", a, [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp_t(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sin_t(const Tensor& a) {
  return unary_op(
      "sin", a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

// ---------------------------------------------------------------------------
// matmul

namespace {

struct MatmulDims {
  Shape out_shape;
  Shape batch;           // broadcast batch dims
  int64_t m, k, n;
  Shape a_batch, b_batch;  // per-input batch dims, 1-padded on the left
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa.size() >= 2 && sb.size() >= 2,
          "matmul: inputs must have rank >= 2, got " + shape_str(sa) +
              " and " + shape_str(sb));
  MatmulDims d;
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  const int64_t kb = sb[sb.size() - 2];
  d.n = sb[sb.size() - 1];
  require(d.k == kb, "matmul: inner dimensions disagree, " + shape_str(sa) +
                         " x " + shape_str(sb));
  const size_t nbatch = std::max(sa.size(), sb.size()) - 2;
  d.a_batch.assign(nbatch, 1);
  d.b_batch.assign(nbatch, 1);
  for (size_t i = 0; i < sa.size() - 2; ++i)
    d.a_batch[nbatch - (sa.size() - 2) + i] = sa[i];
  for (size_t i = 0; i < sb.size() - 2; ++i)
    d.b_batch[nbatch - (sb.size() - 2) + i] = sb[i];
  d.batch.resize(nbatch);
  for (size_t i = 0; i < nbatch; ++i) {
    const int64_t da = d.a_batch[i], db = d.b_batch[i];
    require(da == db || da == 1 || db == 1,
            "matmul: batch dimensions not broadcastable, " + shape_str(sa) +
                " x " + shape_str(sb));
    d.batch[i] = std::max(da, db);
  }
  d.out_shape = d.batch;
  d.out_shape.push_back(d.m);
  d.out_shape.push_back(d.n);
  return d;
}

// Maps a flat broadcast-batch index to the flat batch index of an input
// whose batch dims may be 1.
int64_t map_batch(int64_t flat, const Shape& batch, const Shape& in_batch) {
  int64_t idx = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    int64_t stride = 1;
    for (size_t j = i + 1; j < batch.size(); ++j) stride *= batch[j];
    const int64_t coord = (flat / stride) % batch[i];
    idx = idx * in_batch[i] + (in_batch[i] == 1 ? 0 : coord);
  }
  return idx;
}

// C[m,n] (+)= A[m,k] x B[k,n], j tiled so the accumulator block stays in
// vector registers across the whole k loop.
template <bool Accumulate>
void matmul_kernel(const double* A, const double* B, double* C, int64_t m,
                   int64_t k, int64_t n) {
  constexpr int64_t JT = 32;
  for (int64_t i = 0; i < m; ++i) {
    const double* Ai = A + i * k;
    double* Ci = C + i * n;
    int64_t j0 = 0;
    for (; j0 + JT <= n; j0 += JT) {
      double acc[JT] = {0};
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = Ai[kk];
        const double* Bk = B + kk * n + j0;
        for (int64_t jj = 0; jj < JT; ++jj) acc[jj] += av * Bk[jj];
      }
      if constexpr (Accumulate)
        for (int64_t jj = 0; jj < JT; ++jj) Ci[j0 + jj] += acc[jj];
      else
        for (int64_t jj = 0; jj < JT; ++jj) Ci[j0 + jj] = acc[jj];
    }
    if (j0 < n) {
      const int64_t rem = n - j0;
      double acc[JT] = {0};
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = Ai[kk];
        const double* Bk = B + kk * n + j0;
        for (int64_t jj = 0; jj < rem; ++jj) acc[jj] += av * Bk[jj];
      }
      if constexpr (Accumulate)
        for (int64_t jj = 0; jj < rem; ++jj) Ci[j0 + jj] += acc[jj];
      else
        for (int64_t jj = 0; jj < rem; ++jj) Ci[j0 + jj] = acc[jj];
    }
  }
}

void transpose_into(const double* src, double* dst, int64_t rows,
                    int64_t cols) {
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  auto node = fresh("matmul", d.out_shape, {a, b});
  const int64_t batches = numel_of(d.batch);
  const int64_t m = d.m, k = d.k, n = d.n;
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = node->value.data();
  for (int64_t bi = 0; bi < batches; ++bi)
    matmul_kernel<false>(A + map_batch(bi, d.batch, d.a_batch) * m * k,
                         B + map_batch(bi, d.batch, d.b_batch) * k * n,
                         C + bi * m * n, m, k, n);
  if (node->requires_grad) {
    auto pa = a.node(), pb = b.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, pb, d]() {
      const int64_t batches = numel_of(d.batch);
      const int64_t m = d.m, k = d.k, n = d.n;
      const double* G = out->grad.data();
      // both grads reuse the forward kernel on transposed copies:
      // dA += G x B^T and dB += A^T x G
      if (auto* ga = grad_of(pa)) {
        const double* B = pb->value.data();
        std::vector<double> bt(static_cast<size_t>(k * n));
        int64_t last_b = -1;
        for (int64_t bi = 0; bi < batches; ++bi) {
          const int64_t b_idx = map_batch(bi, d.batch, d.b_batch);
          if (b_idx != last_b) {
            transpose_into(B + b_idx * k * n, bt.data(), k, n);
            last_b = b_idx;
          }
          matmul_kernel<true>(G + bi * m * n, bt.data(),
                              ga->data() +
                                  map_batch(bi, d.batch, d.a_batch) * m * k,
                              m, n, k);
        }
      }
      if (auto* gb = grad_of(pb)) {
        const double* A = pa->value.data();
        std::vector<double> at(static_cast<size_t>(m * k));
        int64_t last_a = -1;
        for (int64_t bi = 0; bi < batches; ++bi) {
          const int64_t a_idx = map_batch(bi, d.batch, d.a_batch);
          if (a_idx != last_a) {
            transpose_into(A + a_idx * m * k, at.data(), m, k);
            last_a = a_idx;
          }
          matmul_kernel<true>(at.data(), G + bi * m * n,
                              gb->data() +
                                  map_batch(bi, d.batch, d.b_batch) * k * n,
                              k, m, n);
        }
      }
    };
  }
  return Tensor::wrap(node);
}

// ---------------------------------------------------------------------------
// shape ops

Tensor transpose(const Tensor& a, int axis_a, int axis_b) {
  const int ax = norm_axis("transpose", a, axis_a);
  const int bx = norm_axis("transpose", a, axis_b);
  Shape out_shape = a.shape();
  std::swap(out_shape[static_cast<size_t>(ax)],
            out_shape[static_cast<size_t>(bx)]);
  auto node = fresh("transpose", out_shape, {a});
  const auto& in_shape = a.shape();
  const int r = a.rank();
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] =
        in_strides[static_cast<size_t>(i + 1)] * in_shape[static_cast<size_t>(i + 1)];
  // out coordinate -> in flat index, with the two axes swapped
  std::vector<int64_t> out_to_in(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_to_in[static_cast<size_t>(i)] = i;
  std::swap(out_to_in[static_cast<size_t>(ax)], out_to_in[static_cast<size_t>(bx)]);
  const int64_t total = numel_of(out_shape);
  std::vector<int64_t> perm_strides(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    perm_strides[static_cast<size_t>(i)] =
        in_strides[static_cast<size_t>(out_to_in[static_cast<size_t>(i)])];
  const auto& x = a.data();
  std::vector<int64_t> mapping(static_cast<size_t>(total));
  {
    std::vector<int64_t> coord(static_cast<size_t>(r), 0);
    for (int64_t f = 0; f < total; ++f) {
      int64_t src = 0;
      for (int i = 0; i < r; ++i)
        src += coord[static_cast<size_t>(i)] * perm_strides[static_cast<size_t>(i)];
      mapping[static_cast<size_t>(f)] = src;
      node->value[static_cast<size_t>(f)] = x[static_cast<size_t>(src)];
      for (int i = r - 1; i >= 0; --i) {
        if (++coord[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
        coord[static_cast<size_t>(i)] = 0;
      }
    }
  }
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, mapping = std::move(mapping)]() {
      if (auto* g = grad_of(pa))
        for (size_t f = 0; f < mapping.size(); ++f)
          (*g)[static_cast<size_t>(mapping[f])] += out->grad[f];
    };
  }
  return Tensor::wrap(node);
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel_of(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " +
              shape_str(shape));
  auto node = fresh("reshape", std::move(shape), {a});
  node->value = a.data();
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa]() {
      if (auto* g = grad_of(pa))
        for (size_t i = 0; i < out->grad.size(); ++i) (*g)[i] += out->grad[i];
    };
  }
  return Tensor::wrap(node);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: needs at least one tensor");
  const int ax = norm_axis("concat", parts[0], axis);
  Shape out_shape = parts[0].shape();
  int64_t total_len = 0;
  for (const auto& p : parts) {
    require(p.rank() == parts[0].rank(), "concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != ax)
        require(p.shape()[static_cast<size_t>(i)] ==
                    out_shape[static_cast<size_t>(i)],
                "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                    shape_str(parts[0].shape()));
    total_len += p.shape()[static_cast<size_t>(ax)];
  }
  out_shape[static_cast<size_t>(ax)] = total_len;
  auto node = fresh("concat", out_shape, parts);
  const AxisSplit sp = split_at(out_shape, ax);
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t len = p.shape()[static_cast<size_t>(ax)];
    const auto& x = p.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t l = 0; l < len; ++l)
        for (int64_t in = 0; in < sp.inner; ++in)
          node->value[static_cast<size_t>(((o * sp.len) + offset + l) * sp.inner + in)] =
              x[static_cast<size_t>((o * len + l) * sp.inner + in)];
    offset += len;
  }
  if (node->requires_grad) {
    std::vector<std::shared_ptr<TensorNode>> ps;
    std::vector<int64_t> lens;
    for (const auto& p : parts) {
      ps.push_back(p.node());
      lens.push_back(p.shape()[static_cast<size_t>(ax)]);
    }
    TensorNode* out = node.get();
    node->backprop = [out, ps, lens, sp]() {
      int64_t offset = 0;
      for (size_t pi = 0; pi < ps.size(); ++pi) {
        const int64_t len = lens[pi];
        if (auto* g = grad_of(ps[pi])) {
          for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t l = 0; l < len; ++l)
              for (int64_t in = 0; in < sp.inner; ++in)
                (*g)[static_cast<size_t>((o * len + l) * sp.inner + in)] +=
                    out->grad[static_cast<size_t>(
                        ((o * sp.len) + offset + l) * sp.inner + in)];
        }
        offset += len;
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor index_select(const Tensor& a, int axis,
                    const std::vector<int64_t>& indices) {
  const int ax = norm_axis("index_select", a, axis);
  const int64_t len = a.shape()[static_cast<size_t>(ax)];
  for (int64_t idx : indices)
    require(idx >= 0 && idx < len,
            "index_select: index " + std::to_string(idx) +
                " out of range for axis length " + std::to_string(len));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(ax)] = static_cast<int64_t>(indices.size());
  auto node = fresh("index_select", out_shape, {a});
  const AxisSplit sp = split_at(a.shape(), ax);
  const auto& x = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (size_t ii = 0; ii < indices.size(); ++ii)
      for (int64_t in = 0; in < sp.inner; ++in)
        node->value[static_cast<size_t>(
            (o * static_cast<int64_t>(indices.size()) + static_cast<int64_t>(ii)) *
                sp.inner + in)] =
            x[static_cast<size_t>((o * sp.len + indices[ii]) * sp.inner + in)];
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, indices, sp]() {
      if (auto* g = grad_of(pa)) {
        for (int64_t o = 0; o < sp.outer; ++o)
          for (size_t ii = 0; ii < indices.size(); ++ii)
            for (int64_t in = 0; in < sp.inner; ++in)
              (*g)[static_cast<size_t>((o * sp.len + indices[ii]) * sp.inner + in)] +=
                  out->grad[static_cast<size_t>(
                      (o * static_cast<int64_t>(indices.size()) +
                       static_cast<int64_t>(ii)) * sp.inner + in)];
      }
    };
  }
  return Tensor::wrap(node);
}

// ---------------------------------------------------------------------------
// reductions

namespace {

Tensor reduce_axis(const char* op, const Tensor& a, int axis, bool mean) {
  const int ax = norm_axis(op, a, axis);
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i)
    if (i != ax) out_shape.push_back(a.shape()[static_cast<size_t>(i)]);
  if (out_shape.empty()) out_shape.push_back(1);
  auto node = fresh(op, out_shape, {a});
  const AxisSplit sp = split_at(a.shape(), ax);
  const double scale = mean ? 1.0 / static_cast<double>(sp.len) : 1.0;
  const auto& x = a.data();
  std::fill(node->value.begin(), node->value.end(), 0.0);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t l = 0; l < sp.len; ++l)
      for (int64_t in = 0; in < sp.inner; ++in)
        node->value[static_cast<size_t>(o * sp.inner + in)] +=
            x[static_cast<size_t>((o * sp.len + l) * sp.inner + in)];
  if (mean)
    for (auto& v : node->value) v *= scale;
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, sp, scale]() {
      if (auto* g = grad_of(pa)) {
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t l = 0; l < sp.len; ++l)
            for (int64_t in = 0; in < sp.inner; ++in)
              (*g)[static_cast<size_t>((o * sp.len + l) * sp.inner + in)] +=
                  out->grad[static_cast<size_t>(o * sp.inner + in)] * scale;
      }
    };
  }
  return Tensor::wrap(node);
}

}  // namespace

Tensor sum_axis(const Tensor& a, int axis) {
  return reduce_axis("sum_axis", a, axis, false);
}

Tensor mean_axis(const Tensor& a, int axis) {
  return reduce_axis("mean_axis", a, axis, true);
}

Tensor sum_all(const Tensor& a) {
  auto node = fresh("sum_all", {1}, {a});
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  node->value[0] = acc;
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa]() {
      if (auto* g = grad_of(pa)) {
        const double gv = out->grad[0];
        for (auto& v : *g) v += gv;
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  require(bias.rank() == 1, "add_rowwise: bias must be rank 1, got " +
                                shape_str(bias.shape()));
  const int64_t c = a.dim(-1);
  require(bias.numel() == c, "add_rowwise: bias length " +
                                 std::to_string(bias.numel()) +
                                 " does not match last axis of " +
                                 shape_str(a.shape()));
  auto node = fresh("add_rowwise", a.shape(), {a, bias});
  const auto& x = a.data();
  const auto& bv = bias.data();
  const int64_t rows = a.numel() / c;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j)
      node->value[static_cast<size_t>(r * c + j)] =
          x[static_cast<size_t>(r * c + j)] + bv[static_cast<size_t>(j)];
  if (node->requires_grad) {
    auto pa = a.node(), pb = bias.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, pb, rows, c]() {
      if (auto* g = grad_of(pa))
        for (size_t i = 0; i < out->grad.size(); ++i) (*g)[i] += out->grad[i];
      if (auto* g = grad_of(pb))
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < c; ++j)
            (*g)[static_cast<size_t>(j)] +=
                out->grad[static_cast<size_t>(r * c + j)];
    };
  }
  return Tensor::wrap(node);
}

Tensor expand_batch(const Tensor& a, int64_t n) {
  require(n > 0, "expand_batch: batch size must be positive");
  Shape out_shape;
  out_shape.push_back(n);
  for (int64_t d : a.shape()) out_shape.push_back(d);
  auto node = fresh("expand_batch", out_shape, {a});
  const auto& x = a.data();
  const size_t len = x.size();
  for (int64_t b = 0; b < n; ++b)
    std::copy(x.begin(), x.end(),
              node->value.begin() + static_cast<int64_t>(len) * b);
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, n, len]() {
      if (auto* g = grad_of(pa)) {
        for (int64_t b = 0; b < n; ++b)
          for (size_t i = 0; i < len; ++i)
            (*g)[i] += out->grad[static_cast<size_t>(b) * len + i];
      }
    };
  }
  return Tensor::wrap(node);
}

// ---------------------------------------------------------------------------
// softmax family

Tensor softmax(const Tensor& a, int axis) {
  const int ax = norm_axis("softmax", a, axis);
  auto node = fresh("softmax", a.shape(), {a});
  const AxisSplit sp = split_at(a.shape(), ax);
  const auto& x = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      double mx = -HUGE_VAL;
      for (int64_t l = 0; l < sp.len; ++l)
        mx = std::max(mx, x[static_cast<size_t>((o * sp.len + l) * sp.inner + in)]);
      double denom = 0.0;
      for (int64_t l = 0; l < sp.len; ++l) {
        const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
        node->value[idx] = std::exp(x[idx] - mx);
        denom += node->value[idx];
      }
      for (int64_t l = 0; l < sp.len; ++l)
        node->value[static_cast<size_t>((o * sp.len + l) * sp.inner + in)] /= denom;
    }
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, sp]() {
      if (auto* g = grad_of(pa)) {
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t in = 0; in < sp.inner; ++in) {
            double dot = 0.0;
            for (int64_t l = 0; l < sp.len; ++l) {
              const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
              dot += out->grad[idx] * out->value[idx];
            }
            for (int64_t l = 0; l < sp.len; ++l) {
              const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
              (*g)[idx] += out->value[idx] * (out->grad[idx] - dot);
            }
          }
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor log_softmax(const Tensor& a, int axis) {
  const int ax = norm_axis("log_softmax", a, axis);
  auto node = fresh("log_softmax", a.shape(), {a});
  const AxisSplit sp = split_at(a.shape(), ax);
  const auto& x = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      double mx = -HUGE_VAL;
      for (int64_t l = 0; l < sp.len; ++l)
        mx = std::max(mx, x[static_cast<size_t>((o * sp.len + l) * sp.inner + in)]);
      double denom = 0.0;
      for (int64_t l = 0; l < sp.len; ++l)
        denom += std::exp(
            x[static_cast<size_t>((o * sp.len + l) * sp.inner + in)] - mx);
      const double lse = mx + std::log(denom);
      for (int64_t l = 0; l < sp.len; ++l) {
        const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
        node->value[idx] = x[idx] - lse;
      }
    }
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, sp]() {
      if (auto* g = grad_of(pa)) {
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t in = 0; in < sp.inner; ++in) {
            double gsum = 0.0;
            for (int64_t l = 0; l < sp.len; ++l)
              gsum += out->grad[static_cast<size_t>((o * sp.len + l) * sp.inner + in)];
            for (int64_t l = 0; l < sp.len; ++l) {
              const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
              (*g)[idx] += out->grad[idx] - std::exp(out->value[idx]) * gsum;
            }
          }
      }
    };
  }
  return Tensor::wrap(node);
}

// ---------------------------------------------------------------------------
// layernorm / l2_normalize

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  const int64_t c = x.dim(-1);
  require(gain.rank() == 1 && gain.numel() == c,
          "layernorm: gain must be [C]=" + std::to_string(c) + ", got " +
              shape_str(gain.shape()));
  require(bias.rank() == 1 && bias.numel() == c,
          "layernorm: bias must be [C]=" + std::to_string(c) + ", got " +
              shape_str(bias.shape()));
  auto node = fresh("layernorm", x.shape(), {x, gain, bias});
  const int64_t rows = x.numel() / c;
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  // cache per-row 1/sigma and normalized values for backward
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  std::vector<double> xhat(xv.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mean = 0.0;
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat[static_cast<size_t>(r * c + j)] = xh;
      node->value[static_cast<size_t>(r * c + j)] =
          gv[static_cast<size_t>(j)] * xh + bv[static_cast<size_t>(j)];
    }
  }
  if (node->requires_grad) {
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    TensorNode* out = node.get();
    node->backprop = [out, px, pg, pb, rows, c, inv_sigma = std::move(inv_sigma),
                      xhat = std::move(xhat)]() {
      auto* gx = grad_of(px);
      auto* gg = grad_of(pg);
      auto* gb = grad_of(pb);
      for (int64_t r = 0; r < rows; ++r) {
        const double* gy = out->grad.data() + r * c;
        const double* xh = xhat.data() + r * c;
        if (gg)
          for (int64_t j = 0; j < c; ++j)
            (*gg)[static_cast<size_t>(j)] += gy[j] * xh[j];
        if (gb)
          for (int64_t j = 0; j < c; ++j) (*gb)[static_cast<size_t>(j)] += gy[j];
        if (gx) {
          // h = gain * gy; dx = (h - mean(h) - xhat * mean(h*xhat)) / sigma
          double mean_h = 0.0, mean_hx = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const double h = pg->value[static_cast<size_t>(j)] * gy[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= static_cast<double>(c);
          mean_hx /= static_cast<double>(c);
          const double is = inv_sigma[static_cast<size_t>(r)];
          for (int64_t j = 0; j < c; ++j) {
            const double h = pg->value[static_cast<size_t>(j)] * gy[j];
            (*gx)[static_cast<size_t>(r * c + j)] +=
                (h - mean_h - xh[j] * mean_hx) * is;
          }
        }
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor l2_normalize(const Tensor& a, int axis, double eps) {
  const int ax = norm_axis("l2_normalize", a, axis);
  auto node = fresh("l2_normalize", a.shape(), {a});
  const AxisSplit sp = split_at(a.shape(), ax);
  const auto& x = a.data();
  std::vector<double> inv_norm(static_cast<size_t>(sp.outer * sp.inner));
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      double ss = 0.0;
      for (int64_t l = 0; l < sp.len; ++l) {
        const double v = x[static_cast<size_t>((o * sp.len + l) * sp.inner + in)];
        ss += v * v;
      }
      // eps enters squared: the norm stays exact for normal inputs while a
      // zero vector still divides by eps instead of zero
      const double inv = 1.0 / std::sqrt(ss + eps * eps);
      inv_norm[static_cast<size_t>(o * sp.inner + in)] = inv;
      for (int64_t l = 0; l < sp.len; ++l) {
        const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
        node->value[idx] = x[idx] * inv;
      }
    }
  if (node->requires_grad) {
    auto pa = a.node();
    TensorNode* out = node.get();
    node->backprop = [out, pa, sp, inv_norm = std::move(inv_norm)]() {
      if (auto* g = grad_of(pa)) {
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t in = 0; in < sp.inner; ++in) {
            const double inv = inv_norm[static_cast<size_t>(o * sp.inner + in)];
            double dot = 0.0;  // g . x
            for (int64_t l = 0; l < sp.len; ++l) {
              const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
              dot += out->grad[idx] * pa->value[idx];
            }
            for (int64_t l = 0; l < sp.len; ++l) {
              const size_t idx = static_cast<size_t>((o * sp.len + l) * sp.inner + in);
              (*g)[idx] += out->grad[idx] * inv -
                           pa->value[idx] * dot * inv * inv * inv;
            }
          }
      }
    };
  }
  return Tensor::wrap(node);
}

}  // namespace vxf
