#pragma once

// Run configuration: a flat sectioned key-value text file.
//
//   [model]     variant embed_dims heads depths decoder_depths neighborhood
//               window patch_size in_channels num_classes deep_supervision
//               attention posenc embedding offsets
//   [data]      image_size num_classes train_count test_count seed
//   [train]     lr steps batch lambda seed log_every
//   [ablation]  attention posenc embedding seeds
//
// Lists are comma separated and may be bracketed. `#` starts a comment.
// `variant` loads a preset before the other model keys apply, wherever it
// appears in the section.

#include <string>
#include <vector>

#include "agile/network.hpp"
#include "agile/train.hpp"

namespace agile {

struct DataConfig {
  std::int64_t image_size = 64;
  std::int64_t train_count = 200;
  std::int64_t test_count = 50;
  std::uint64_t seed = 0;
  bool operator==(const DataConfig&) const = default;
};

struct AblationConfig {
  std::vector<std::string> attention{"nmsa+dmsa", "wmsa+wmsa"};
  std::vector<std::string> posenc{"msdepe", "none"};
  std::vector<std::string> embedding{"deformable", "rigid"};
  std::int64_t seeds = 1;
  bool operator==(const AblationConfig&) const = default;
};

struct RunConfig {
  NetworkConfig model;
  DataConfig data;
  TrainConfig train;
  AblationConfig ablation;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError with "line N" and the key for malformed input.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Canonical form listing every key; parse_config(write_config(c)) == c.
std::string write_config(const RunConfig& cfg);

// "nmsa+dmsa" <-> (even, odd) block kinds.
std::pair<AttentionKind, AttentionKind> parse_attention_pair(const std::string& s);
std::string attention_pair_name(AttentionKind even, AttentionKind odd);

/// Applies one ablation variant, e.g. ("attention", "wmsa+wmsa").
RunConfig with_variant(const RunConfig& cfg, const std::string& axis, const std::string& variant);
const std::vector<std::string>& ablation_variants(const RunConfig& cfg, const std::string& axis);

}  // namespace agile
