#pragma once

#include "mga/tensor.hpp"

#include <cstddef>
#include <vector>

// Differentiable operations. Every op validates its shapes, computes its
// value eagerly and, when gradients are being recorded, registers a backward
// rule. Convolutions accept any number of leading batch axes in front of the
// documented [C x H x W] layout.

namespace mga::ops {

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
/// x * s where s is a one-element tensor (learnable gains such as lambda).
Tensor mul_scalar(const Tensor& x, const Tensor& s);
Tensor relu(const Tensor& x);

/// While alive, records the smallest |input| any relu on this thread sees.
/// Finite-difference checks use it to reject test points that sit next to a kink.
class ReluMarginProbe {
public:
    ReluMarginProbe();
    ~ReluMarginProbe();
    ReluMarginProbe(const ReluMarginProbe&) = delete;
    ReluMarginProbe& operator=(const ReluMarginProbe&) = delete;
    double margin() const { return margin_; }

private:
    double margin_;
    ReluMarginProbe* outer_;
};
Tensor square(const Tensor& x);
/// x + y where y's shape equals the trailing axes of x.
Tensor add_broadcast(const Tensor& x, const Tensor& y);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the last `count` axes.
Tensor mean_trailing(const Tensor& x, std::size_t count);
/// Stacks one-element tensors into a vector of shape [n].
Tensor stack_scalars(const std::vector<Tensor>& xs);

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// Swaps the last two axes (rank >= 2).
Tensor transpose_last2(const Tensor& x);
/// Rows [begin, end) along axis 0.
Tensor slice0(const Tensor& x, std::size_t begin, std::size_t end);
/// Concatenation along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);

/// [L x C x H x W] -> [L x HW x C]: one row per patch.
Tensor to_patch_rows(const Tensor& x);
/// Inverse of to_patch_rows.
Tensor from_patch_rows(const Tensor& rows, std::size_t h, std::size_t w);

// ---- linear algebra --------------------------------------------------------

/// [m x k] * [k x n], or batched [B x m x k] * [B x k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T with the same batching rules: [.. m x k] * [.. n x k]^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Applies a dense map along one axis: y[.., o, ..] = sum_n W[o, n] x[.., n, ..].
/// With `weight_in_out` the weight is stored as [in x out] instead.
Tensor contract(const Tensor& weight, const Tensor& x, std::size_t axis, bool weight_in_out = false);
/// x + b broadcast along `axis` (b has extent x.dim(axis)).
Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis);
/// Row-wise softmax over the last axis.
Tensor softmax_rows(const Tensor& x);
/// Normalises over `axis` to zero mean, unit variance (no affine).
Tensor layer_norm(const Tensor& x, std::size_t axis, double eps = 1e-5);

// ---- convolutions and resampling ------------------------------------------

/// Same-padded 3x3 depthwise convolution; k is [C x 3 x 3].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& k);
/// Zero-padded 3-tap temporal filter per channel on [L x D x H x W]; k is [D x 3].
Tensor depthwise_conv3d_t311(const Tensor& x, const Tensor& k);
/// Same-padded full 3x3 convolution; k is [C_out x C_in x 3 x 3], bias optional [C_out].
Tensor conv2d_3x3(const Tensor& x, const Tensor& k, const Tensor& bias = {});
/// Pointwise channel map; k is [C_out x C_in], bias optional [C_out].
Tensor conv1x1(const Tensor& x, const Tensor& k, const Tensor& bias = {});
/// Per-channel gain (depthwise 1x1); s is [C].
Tensor channel_scale(const Tensor& x, const Tensor& s);
/// 2x2 stride-2 average pooling; edge blocks average the cells they cover.
Tensor avgpool2x2(const Tensor& x);
/// Bilinear resize (align_corners = false) to out_h x out_w.
Tensor bilinear_upsample2x(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// [.. x C x G x G] -> [.. x (C*p*p) x G/p x G/p], channel order (c, py, px).
Tensor patchify(const Tensor& x, std::size_t patch);

// ---- losses and metrics ----------------------------------------------------

/// (1/Lq) sum_i min_j |q_i - s_j|^2 + (1/Ls) sum_j min_i |q_i - s_j|^2.
Tensor bimhm_distance(const Tensor& q, const Tensor& s);
/// Mean cross-entropy of softmax(logits) rows against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

} // namespace mga::ops
