#pragma once

// Deformable convolution and the patch-embedding stages built from it.

#include <string>

#include "agile/ops.hpp"
#include "agile/params.hpp"

namespace agile {

/// Deformable convolution with a learned offset field.
///
/// The offset field is produced by a convolution over the same input with the
/// same kernel size, stride, padding and dilation, so it has one (dy, dx)
/// pair per output location and tap (2*k*k channels) or, with
/// shared_offsets, one pair per output location (2 channels). Offset weights
/// and bias start at zero, so a fresh layer behaves as a dense convolution.
/// With `deformable == false` no offset branch exists (rigid baseline).
struct DeformConvLayer {
  ParamId weight = 0;
  ParamId bias = 0;
  ParamId offset_weight = 0;
  ParamId offset_bias = 0;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 1;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
  bool shared_offsets = false;
  bool deformable = true;

  struct Options {
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t dilation = 1;
    std::int64_t groups = 1;
    bool shared_offsets = false;
    bool deformable = true;
  };

  static DeformConvLayer create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                std::int64_t in_channels, std::int64_t out_channels, Options opt);

  ConvOptions conv_options() const { return {stride, padding, dilation, groups}; }
  std::int64_t offset_channels() const { return shared_offsets ? 2 : 2 * kernel * kernel; }

  /// The offset field for input f (zeros for a rigid layer).
  Tensor offsets(const ParameterStore& params, const Tensor& f) const;
  Tensor forward(const ParameterStore& params, const Tensor& f) const;
};

/// Functional form: offsets = conv2d(f, offset_weight, offset_bias), then a
/// deformable convolution of f with `weight` at those offsets.
Tensor deformable_conv2d(const Tensor& f, const Tensor& weight, const std::optional<Tensor>& bias,
                         const Tensor& offset_weight, const Tensor& offset_bias, ConvOptions opt);

Tensor deformable_conv2d(const DeformConvLayer& layer, const ParameterStore& params, const Tensor& f);

/// Channel-wise layer normalization of a map [C, H, W].
Tensor layer_norm_map(const Tensor& map, const Tensor& gain, const Tensor& shift);

/// Two stacked k=3 deformable convolutions with stride n/2 each, layer
/// normalization after each. Maps an image [C, H, W] to [d, H/n, W/n]; the
/// intermediate layer has d/2 channels.
struct PatchEmbedFirst {
  DeformConvLayer first;
  DeformConvLayer second;
  ParamId norm1_gain = 0, norm1_shift = 0, norm2_gain = 0, norm2_shift = 0;
  std::int64_t patch = 4;

  static PatchEmbedFirst create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                std::int64_t in_channels, std::int64_t embed_dim, std::int64_t patch,
                                bool deformable = true, bool shared_offsets = false);
  Tensor forward(const ParameterStore& params, const Tensor& image) const;
};

/// Dense overlapping k=3 stride-2 convolution doubling the channel count,
/// followed by layer normalization.
struct PatchEmbedDown {
  ParamId weight = 0, bias = 0, norm_gain = 0, norm_shift = 0;
  std::int64_t in_channels = 0;

  static PatchEmbedDown create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                               std::int64_t in_channels);
  Tensor forward(const ParameterStore& params, const Tensor& map) const;
};

/// Output extent of a convolution: floor((in + 2*pad - k) / s) + 1.
constexpr std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                       std::int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace agile
