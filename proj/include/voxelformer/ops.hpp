#pragma once

#include <vector>

#include "voxelformer/tensor.hpp"

namespace vxf {

// Differentiable primitives over dense f64 tensors. Elementwise binary ops
// demand identical shapes; matmul broadcasts leading batch dimensions by
// equality-or-1 and nothing else. Every op here passes the central
// finite-difference gradient check at 1e-4 relative error.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sin_t(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form

// [..,m,k] x [..,k,n] -> [..,m,n]; leading dims broadcast by equality or 1.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a, int axis_a, int axis_b);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor index_select(const Tensor& a, int axis,
                    const std::vector<int64_t>& indices);

Tensor sum_axis(const Tensor& a, int axis);   // removes the axis
Tensor mean_axis(const Tensor& a, int axis);  // removes the axis
Tensor sum_all(const Tensor& a);              // -> scalar
Tensor mean_all(const Tensor& a);             // -> scalar

// Adds a [C] vector to the last axis of [..,C].
Tensor add_rowwise(const Tensor& a, const Tensor& bias);

// [d0,..] -> [n, d0,..]; backward sums over the new leading axis.
Tensor expand_batch(const Tensor& a, int64_t n);

// Max-subtracted softmax along `axis`; slices sum to 1 within 1e-9.
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine gain/bias (both shaped [C]).
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);

// Rows along `axis` scaled to unit L2 norm; eps inside the square root keeps
// zero vectors from dividing by zero.
Tensor l2_normalize(const Tensor& a, int axis, double eps = 1e-12);

}  // namespace vxf
