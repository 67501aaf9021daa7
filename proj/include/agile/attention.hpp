#pragma once

// Multi-head self-attention variants over a token grid f[L, d_f]:
//   DMSA  keys/values re-sampled from f at learned per-head offsets
//   NMSA  each query attends to its k x k neighborhood only
//   WMSA  full attention inside non-overlapping windows
//   full  plain multi-head self-attention (shared oracle for all three)

#include <span>
#include <string>
#include <vector>

#include "agile/params.hpp"
#include "agile/tensor.hpp"

namespace agile {

enum class AttentionKind { kDmsa, kNmsa, kWmsa, kFull };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& name);

struct GridShape {
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t size() const { return height * width; }
  bool operator==(const GridShape&) const = default;
};

struct AttentionConfig {
  std::int64_t heads = 1;
  std::int64_t key_dim = 1;
  std::int64_t value_dim = 1;
  std::int64_t neighborhood = 7;  // k, odd
  std::int64_t window = 4;        // WMSA window edge
  AttentionKind kind = AttentionKind::kNmsa;

  /// Throws ConfigError unless heads*key_dim == heads*value_dim == embed_dim
  /// and the neighborhood size is odd and positive.
  void validate(std::int64_t embed_dim) const;
  static AttentionConfig for_dim(std::int64_t embed_dim, std::int64_t heads, AttentionKind kind,
                                 std::int64_t neighborhood = 7, std::int64_t window = 4);
};

/// For each location, the K = kh*kw key locations it attends to. Rows of the
/// centered k x k patch, shifted inward at borders so every location has
/// exactly K in-bounds neighbors. k larger than an extent is clamped to that
/// extent (the whole axis).
struct NeighborhoodIndex {
  GridShape grid;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::vector<std::int32_t> index;  // [L, K], row-major over the patch

  std::int64_t neighbors() const { return kernel_h * kernel_w; }
  std::span<const std::int32_t> of(std::int64_t location) const {
    return {index.data() + location * neighbors(), static_cast<std::size_t>(neighbors())};
  }
};

NeighborhoodIndex neighborhood_index(GridShape grid, std::int64_t k);

/// Projection and offset-network tensors of one attention layer.
/// Head h owns columns [h*d, (h+1)*d) of the query/key/value projections.
struct AttentionWeights {
  Tensor query, query_bias;  // [d_f, H*dk], [H*dk]
  Tensor key, key_bias;      // [d_f, H*dk], [H*dk]
  Tensor value, value_bias;  // [d_f, H*dv], [H*dv]
  Tensor out, out_bias;      // [H*dv, d_f], [d_f]
  // DMSA only: depth-wise 5x5 conv over each head's query map, GELU, then a
  // per-head 1x1 conv to (dy, dx).
  Tensor offset_dw, offset_dw_bias;  // [H*dk, 1, 5, 5], [H*dk]
  Tensor offset_pw, offset_pw_bias;  // [2H, dk, 1, 1], [2H]
};

inline constexpr std::int64_t kOffsetKernel = 5;

Tensor full_attention(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg);
Tensor dmsa(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid);
Tensor nmsa(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid);
Tensor wmsa(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid,
            std::int64_t window);
Tensor attend(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid);

/// Per-head DMSA sampling offsets [H, L, 2] for input f.
Tensor dmsa_offsets(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid);

/// Differentiable gathered attention: q, k, v are [H, L, d]; each query l
/// attends to index[l*K .. l*K+K). Returns [H, L, dv].
Tensor neighborhood_attention(const Tensor& q, const Tensor& k, const Tensor& v, const NeighborhoodIndex& index);

// [L, H*d] <-> [H, L, d]
Tensor split_heads(const Tensor& x, std::int64_t heads);
Tensor merge_heads(const Tensor& x);

/// Attention layer whose tensors live in a ParameterStore.
struct AttentionLayer {
  AttentionConfig config;
  ParamId query = 0, query_bias = 0, key = 0, key_bias = 0, value = 0, value_bias = 0, out = 0, out_bias = 0;
  ParamId offset_dw = 0, offset_dw_bias = 0, offset_pw = 0, offset_pw_bias = 0;
  bool has_offsets = false;

  static AttentionLayer create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                               std::int64_t embed_dim, const AttentionConfig& cfg);
  AttentionWeights weights(const ParameterStore& params) const;
  Tensor forward(const ParameterStore& params, const Tensor& f, GridShape grid) const;
};

/// Pre-norm transformer block: f + attn(LN(f)), then + MLP(LN(.)) with a
/// 4x expansion and GELU.
struct TransformerBlock {
  AttentionLayer attention;
  ParamId norm1_gain = 0, norm1_shift = 0, norm2_gain = 0, norm2_shift = 0;
  ParamId fc1 = 0, fc1_bias = 0, fc2 = 0, fc2_bias = 0;

  static constexpr std::int64_t kMlpRatio = 4;

  static TransformerBlock create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                 std::int64_t embed_dim, const AttentionConfig& cfg);
  Tensor forward(const ParameterStore& params, const Tensor& f, GridShape grid) const;
};

/// Attention kind of block `index` in a stage that alternates `even` and
/// `odd` kinds.
constexpr AttentionKind alternating_kind(std::int64_t index, AttentionKind even, AttentionKind odd) {
  return index % 2 == 0 ? even : odd;
}

Tensor transformer_block(const TransformerBlock& block, const ParameterStore& params, const Tensor& f,
                         GridShape grid);

}  // namespace agile
