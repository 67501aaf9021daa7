#pragma once

// Differentiable tensor operations. Every op records a backward rule on the
// active Tape when one of its inputs is tracked.

#include <optional>
#include <vector>

#include "agile/kernels.hpp"
#include "agile/tensor.hpp"

namespace agile {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis, then applies gain and shift of that size.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);

/// Rows of `a` (its first axis) picked by index; repeated indices allowed.
Tensor gather_rows(const Tensor& a, const std::vector<std::int32_t>& index);

struct ConvOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
};

/// Cross-correlation of input[Cin, H, W] with weight[Cout, Cin/groups, kh, kw].
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, ConvOptions opt);

/// Deformable convolution: every kernel tap samples the input bilinearly at
/// its lattice position plus an offset. offsets is [2*kh*kw, Ho, Wo]
/// (per-tap) or [2, Ho, Wo] (shared by all taps), rows before columns.
Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                     const std::optional<Tensor>& bias, ConvOptions opt);

/// Transposed convolution of input[Cin, H, W] with weight[Cin, Cout, kh, kw];
/// output extent (H-1)*stride - 2*padding + kh.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                        std::int64_t stride, std::int64_t padding = 0);

/// x[C, H, W] -> x[C, H/f, W/f] taking every f-th pixel.
Tensor nearest_downsample(const Tensor& x, std::int64_t factor);

// Shape utilities for the token/map duality: tokens[L, C] <-> map[C, H, W].
Tensor tokens_to_map(const Tensor& tokens, std::int64_t height, std::int64_t width);
Tensor map_to_tokens(const Tensor& map);

kernels::ConvGeometry conv_geometry(const Shape& input, const Shape& weight, ConvOptions opt);

}  // namespace agile
