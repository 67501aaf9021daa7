#include "agile/deform.hpp"

#include "agile/error.hpp"

namespace agile {

DeformConvLayer DeformConvLayer::create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                        std::int64_t in_channels, std::int64_t out_channels, Options opt) {
  if (opt.kernel < 1 || opt.stride < 1 || opt.dilation < 1) {
    throw ConfigError(prefix + ": kernel, stride and dilation must be positive");
  }
  if (in_channels % opt.groups || out_channels % opt.groups) {
    throw ConfigError(prefix + ": groups must divide channel counts");
  }
  DeformConvLayer l;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel = opt.kernel;
  l.stride = opt.stride;
  l.padding = opt.kernel / 2;
  l.dilation = opt.dilation;
  l.groups = opt.groups;
  l.shared_offsets = opt.shared_offsets;
  l.deformable = opt.deformable;
  l.weight = params.add(prefix + ".weight", init::trunc_normal({out_channels, in_channels / opt.groups, opt.kernel,
                                                                opt.kernel},
                                                               rng, prefix + ".weight"));
  l.bias = params.add(prefix + ".bias", Tensor::zeros({out_channels}));
  if (l.deformable) {
    l.offset_weight = params.add(prefix + ".offset.weight",
                                 Tensor::zeros({l.offset_channels(), in_channels, opt.kernel, opt.kernel}));
    l.offset_bias = params.add(prefix + ".offset.bias", Tensor::zeros({l.offset_channels()}));
  }
  return l;
}

Tensor DeformConvLayer::offsets(const ParameterStore& params, const Tensor& f) const {
  if (!deformable) {
    const auto g = conv_geometry(f.shape(), params[weight].shape(), conv_options());
    return Tensor::zeros({offset_channels(), g.out_h(), g.out_w()});
  }
  return conv2d(f, params[offset_weight], params[offset_bias], {stride, padding, dilation, 1});
}

Tensor DeformConvLayer::forward(const ParameterStore& params, const Tensor& f) const {
  return deformable_conv2d(*this, params, f);
}

Tensor deformable_conv2d(const Tensor& f, const Tensor& weight, const std::optional<Tensor>& bias,
                         const Tensor& offset_weight, const Tensor& offset_bias, ConvOptions opt) {
  if (f.rank() != 3) throw DimensionError("deformable_conv2d: input must be [C,H,W], got " + shape_str(f.shape()));
  const auto offsets = conv2d(f, offset_weight, offset_bias, {opt.stride, opt.padding, opt.dilation, 1});
  return deform_conv2d(f, offsets, weight, bias, opt);
}

Tensor deformable_conv2d(const DeformConvLayer& layer, const ParameterStore& params, const Tensor& f) {
  if (!layer.deformable) return conv2d(f, params[layer.weight], params[layer.bias], layer.conv_options());
  return deformable_conv2d(f, params[layer.weight], params[layer.bias], params[layer.offset_weight],
                           params[layer.offset_bias], layer.conv_options());
}

Tensor layer_norm_map(const Tensor& map, const Tensor& gain, const Tensor& shift) {
  return tokens_to_map(layer_norm(map_to_tokens(map), gain, shift), map.dim(1), map.dim(2));
}

PatchEmbedFirst PatchEmbedFirst::create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                        std::int64_t in_channels, std::int64_t embed_dim, std::int64_t patch,
                                        bool deformable, bool shared_offsets) {
  if (patch < 2 || patch % 2) throw ConfigError("patch_size must be even and >= 2, got " + std::to_string(patch));
  if (embed_dim < 2 || embed_dim % 2) throw ConfigError("embed dim must be even, got " + std::to_string(embed_dim));
  PatchEmbedFirst pe;
  pe.patch = patch;
  DeformConvLayer::Options opt;
  opt.kernel = 3;
  opt.stride = patch / 2;
  opt.deformable = deformable;
  opt.shared_offsets = shared_offsets;
  pe.first = DeformConvLayer::create(params, rng, prefix + ".conv1", in_channels, embed_dim / 2, opt);
  pe.norm1_gain = params.add(prefix + ".norm1.gain", Tensor::full({embed_dim / 2}, 1.0));
  pe.norm1_shift = params.add(prefix + ".norm1.shift", Tensor::zeros({embed_dim / 2}));
  pe.second = DeformConvLayer::create(params, rng, prefix + ".conv2", embed_dim / 2, embed_dim, opt);
  pe.norm2_gain = params.add(prefix + ".norm2.gain", Tensor::full({embed_dim}, 1.0));
  pe.norm2_shift = params.add(prefix + ".norm2.shift", Tensor::zeros({embed_dim}));
  return pe;
}

Tensor PatchEmbedFirst::forward(const ParameterStore& params, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(1) % patch || image.dim(2) % patch) {
    throw DimensionError("patch embedding: image " + shape_str(image.shape()) + " extent must be divisible by " +
                         std::to_string(patch));
  }
  auto x = layer_norm_map(first.forward(params, image), params[norm1_gain], params[norm1_shift]);
  return layer_norm_map(second.forward(params, x), params[norm2_gain], params[norm2_shift]);
}

PatchEmbedDown PatchEmbedDown::create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                      std::int64_t in_channels) {
  PatchEmbedDown pd;
  pd.in_channels = in_channels;
  const std::int64_t out = 2 * in_channels;
  pd.weight = params.add(prefix + ".weight", init::trunc_normal({out, in_channels, 3, 3}, rng, prefix + ".weight"));
  pd.bias = params.add(prefix + ".bias", Tensor::zeros({out}));
  pd.norm_gain = params.add(prefix + ".norm.gain", Tensor::full({out}, 1.0));
  pd.norm_shift = params.add(prefix + ".norm.shift", Tensor::zeros({out}));
  return pd;
}

Tensor PatchEmbedDown::forward(const ParameterStore& params, const Tensor& map) const {
  if (map.rank() != 3 || map.dim(1) < 2 || map.dim(2) < 2) {
    throw DimensionError("downsampling embedding needs spatial extent >= 2, got " + shape_str(map.shape()));
  }
  auto y = conv2d(map, params[weight], params[bias], {2, 1, 1, 1});
  return layer_norm_map(y, params[norm_gain], params[norm_shift]);
}

}  // namespace agile
