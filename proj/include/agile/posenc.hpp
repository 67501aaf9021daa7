#pragma once

// Conditional positional encodings on token grids: f + P(f).

#include <string>

#include "agile/attention.hpp"
#include "agile/params.hpp"

namespace agile {

enum class PosEncKind { kMsDepe, kCpe, kNone };

std::string to_string(PosEncKind kind);
PosEncKind parse_posenc_kind(const std::string& name);

/// One depth-wise deformable branch: weight [C,1,k,k], bias [C]; a dense
/// conv with the same kernel emits a single offset field [2,H,W] shared by
/// all channels and taps.
struct DepthwiseDeformBranch {
  Tensor weight, bias;
  Tensor offset_weight, offset_bias;  // [2,C,k,k], [2]
};

struct MsDepeWeights {
  DepthwiseDeformBranch k3, k5;
};

/// f + dwdeform3(f) + dwdeform5(f) on tokens f[L, C].
Tensor ms_depe(const Tensor& f, const MsDepeWeights& w, GridShape grid);

/// f + dense depth-wise 3x3 conv; weight [C,1,3,3], bias [C].
Tensor cpe_baseline(const Tensor& f, const Tensor& weight, const Tensor& bias, GridShape grid);

/// Depth-wise deformable convolution of a map [C,H,W] with kernel k,
/// stride 1 and "same" padding.
Tensor depthwise_deform_branch(const Tensor& map, const DepthwiseDeformBranch& b);

struct PosEncLayer {
  PosEncKind kind = PosEncKind::kNone;
  struct Branch {
    ParamId weight = 0, bias = 0, offset_weight = 0, offset_bias = 0;
  };
  Branch k3, k5;        // MS-DePE
  ParamId weight = 0;   // CPE
  ParamId bias = 0;

  static PosEncLayer create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                            std::int64_t channels, PosEncKind kind);
  MsDepeWeights ms_depe_weights(const ParameterStore& params) const;
  Tensor forward(const ParameterStore& params, const Tensor& f, GridShape grid) const;
};

}  // namespace agile
