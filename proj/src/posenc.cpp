#include "agile/posenc.hpp"

#include "agile/error.hpp"
#include "agile/ops.hpp"

namespace agile {

using i64 = std::int64_t;

std::string to_string(PosEncKind kind) {
  switch (kind) {
    case PosEncKind::kMsDepe: return "msdepe";
    case PosEncKind::kCpe: return "cpe";
    case PosEncKind::kNone: return "none";
  }
  return "?";
}

PosEncKind parse_posenc_kind(const std::string& name) {
  if (name == "msdepe") return PosEncKind::kMsDepe;
  if (name == "cpe") return PosEncKind::kCpe;
  if (name == "none") return PosEncKind::kNone;
  throw ConfigError("unknown positional encoding '" + name + "' (expected msdepe, cpe or none)");
}

namespace {

Tensor to_map(const Tensor& f, GridShape grid, const char* op) {
  if (f.rank() != 2 || f.dim(0) != grid.size()) {
    throw DimensionError(std::string(op) + ": tokens " + shape_str(f.shape()) + " do not match a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  return tokens_to_map(f, grid.height, grid.width);
}

}  // namespace

Tensor depthwise_deform_branch(const Tensor& map, const DepthwiseDeformBranch& b) {
  const i64 k = b.weight.dim(2);
  const ConvOptions opt{1, k / 2, 1, map.dim(0)};
  auto offsets = conv2d(map, b.offset_weight, b.offset_bias, {1, k / 2, 1, 1});
  return deform_conv2d(map, offsets, b.weight, b.bias, opt);
}

Tensor ms_depe(const Tensor& f, const MsDepeWeights& w, GridShape grid) {
  const auto map = to_map(f, grid, "ms_depe");
  auto delta = add(depthwise_deform_branch(map, w.k3), depthwise_deform_branch(map, w.k5));
  return add(f, map_to_tokens(delta));
}

Tensor cpe_baseline(const Tensor& f, const Tensor& weight, const Tensor& bias, GridShape grid) {
  const auto map = to_map(f, grid, "cpe");
  return add(f, map_to_tokens(conv2d(map, weight, bias, {1, 1, 1, map.dim(0)})));
}

PosEncLayer PosEncLayer::create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                i64 channels, PosEncKind kind) {
  PosEncLayer p;
  p.kind = kind;
  auto branch = [&](i64 k) {
    const std::string n = prefix + ".k" + std::to_string(k);
    Branch b;
    b.weight = params.add(n + ".weight", init::trunc_normal({channels, 1, k, k}, rng, n + ".weight"));
    b.bias = params.add(n + ".bias", Tensor::zeros({channels}));
    b.offset_weight = params.add(n + ".offset.weight", Tensor::zeros({2, channels, k, k}));
    b.offset_bias = params.add(n + ".offset.bias", Tensor::zeros({2}));
    return b;
  };
  if (kind == PosEncKind::kMsDepe) {
    p.k3 = branch(3);
    p.k5 = branch(5);
  } else if (kind == PosEncKind::kCpe) {
    p.weight = params.add(prefix + ".weight", init::trunc_normal({channels, 1, 3, 3}, rng, prefix + ".weight"));
    p.bias = params.add(prefix + ".bias", Tensor::zeros({channels}));
  }
  return p;
}

MsDepeWeights PosEncLayer::ms_depe_weights(const ParameterStore& params) const {
  auto get = [&](const Branch& b) {
    return DepthwiseDeformBranch{params[b.weight], params[b.bias], params[b.offset_weight], params[b.offset_bias]};
  };
  return {get(k3), get(k5)};
}

Tensor PosEncLayer::forward(const ParameterStore& params, const Tensor& f, GridShape grid) const {
  switch (kind) {
    case PosEncKind::kMsDepe: return ms_depe(f, ms_depe_weights(params), grid);
    case PosEncKind::kCpe: return cpe_baseline(f, params[weight], params[bias], grid);
    case PosEncKind::kNone: return f;
  }
  return f;
}

}  // namespace agile
