#pragma once

// 2D U-shaped segmentation network: deformable patch embedding, a 4-stage
// encoder of alternating attention blocks, a 3-stage decoder with skip
// fusion, and class heads with optional deep supervision.

#include <array>
#include <string>
#include <vector>

#include "agile/attention.hpp"
#include "agile/deform.hpp"
#include "agile/params.hpp"
#include "agile/posenc.hpp"

namespace agile {

struct NetworkConfig {
  std::string variant = "nano";
  std::array<std::int64_t, 4> embed_dims{16, 32, 64, 128};
  std::array<std::int64_t, 4> heads{1, 2, 4, 8};
  std::array<std::int64_t, 4> depths{1, 2, 5, 1};
  std::array<std::int64_t, 3> decoder_depths{1, 1, 1};  // deepest decoder stage first
  std::int64_t neighborhood = 7;
  std::int64_t window = 4;
  std::int64_t patch_size = 4;
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 3;
  bool deep_supervision = true;
  // Attention of even- and odd-indexed blocks within a stage.
  AttentionKind even_attention = AttentionKind::kNmsa;
  AttentionKind odd_attention = AttentionKind::kDmsa;
  PosEncKind posenc = PosEncKind::kMsDepe;
  bool deformable_embedding = true;
  bool shared_offsets = false;  // patch-embedding offset granularity

  /// Throws ConfigError naming the offending field.
  void validate() const;
  // Input extent must be a multiple of this.
  std::int64_t input_multiple() const { return patch_size * 8; }

  bool operator==(const NetworkConfig&) const = default;

  static NetworkConfig nano();
  static NetworkConfig tiny();
  static NetworkConfig base();
  static NetworkConfig preset(const std::string& name);
};

struct NetworkOutput {
  Tensor logits;                  // [classes, H, W]
  std::vector<Tensor> aux_logits; // decreasing resolution: H/n, H/2n, H/4n
};

class Network {
 public:
  static Network build(const NetworkConfig& cfg, std::uint64_t seed);

  NetworkOutput forward(const Tensor& image) const;
  /// Encoder outputs per stage as maps [d_i, H/(n 2^i), W/(n 2^i)].
  std::vector<Tensor> encode(const Tensor& image) const;

  const NetworkConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::int64_t param_count() const { return params_.total_elements(); }

 private:
  struct Stage {
    PosEncLayer posenc;
    std::vector<TransformerBlock> blocks;
  };
  struct DecoderStage {
    ParamId up_weight = 0, up_bias = 0;      // tconv k2 s2, [2d, d, 2, 2]
    ParamId fuse_weight = 0, fuse_bias = 0;  // [2d, d]
    Stage stage;
    ParamId aux_weight = 0, aux_bias = 0;    // 1x1 conv to classes
  };

  Tensor run_stage(const Stage& s, const Tensor& map) const;

  NetworkConfig cfg_;
  ParameterStore params_;
  PatchEmbedFirst embed_;
  std::array<PatchEmbedDown, 3> downs_;
  std::array<Stage, 4> encoder_;
  std::array<DecoderStage, 3> decoder_;
  ParamId head_up1_ = 0, head_up1_bias_ = 0, head_up2_ = 0, head_up2_bias_ = 0;
  ParamId head_weight_ = 0, head_bias_ = 0;
};

std::int64_t param_count(const Network& net);

}  // namespace agile
