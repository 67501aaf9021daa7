#include "agile/attention.hpp"

#include <algorithm>
#include <cmath>

#include "agile/error.hpp"
#include "agile/kernels.hpp"
#include "agile/ops.hpp"
#include "agile/sampling.hpp"

namespace agile {

using i64 = std::int64_t;

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kDmsa: return "dmsa";
    case AttentionKind::kNmsa: return "nmsa";
    case AttentionKind::kWmsa: return "wmsa";
    case AttentionKind::kFull: return "full";
  }
  return "?";
}

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "dmsa") return AttentionKind::kDmsa;
  if (name == "nmsa") return AttentionKind::kNmsa;
  if (name == "wmsa") return AttentionKind::kWmsa;
  if (name == "full") return AttentionKind::kFull;
  throw ConfigError("unknown attention kind '" + name + "' (expected dmsa, nmsa, wmsa or full)");
}

void AttentionConfig::validate(i64 embed_dim) const {
  if (heads < 1) throw ConfigError("attention heads must be >= 1");
  if (heads * key_dim != embed_dim || heads * value_dim != embed_dim) {
    throw ConfigError("attention: heads*key_dim and heads*value_dim must equal embed dim " + std::to_string(embed_dim) +
                      " (heads=" + std::to_string(heads) + ", key_dim=" + std::to_string(key_dim) +
                      ", value_dim=" + std::to_string(value_dim) + ")");
  }
  if (neighborhood < 1 || neighborhood % 2 == 0) {
    throw ConfigError("attention: neighborhood size must be odd and >= 1, got " + std::to_string(neighborhood));
  }
  if (window < 1) throw ConfigError("attention: window must be >= 1");
}

AttentionConfig AttentionConfig::for_dim(i64 embed_dim, i64 heads, AttentionKind kind, i64 neighborhood, i64 window) {
  if (heads < 1 || embed_dim % heads) {
    throw ConfigError("heads " + std::to_string(heads) + " must divide embed dim " + std::to_string(embed_dim));
  }
  AttentionConfig c;
  c.heads = heads;
  c.key_dim = embed_dim / heads;
  c.value_dim = embed_dim / heads;
  c.neighborhood = neighborhood;
  c.window = window;
  c.kind = kind;
  c.validate(embed_dim);
  return c;
}

NeighborhoodIndex neighborhood_index(GridShape grid, i64 k) {
  if (k < 1 || k % 2 == 0) throw ConfigError("neighborhood size must be odd and >= 1, got " + std::to_string(k));
  NeighborhoodIndex ni;
  ni.grid = grid;
  ni.kernel_h = std::min(k, grid.height);
  ni.kernel_w = std::min(k, grid.width);
  ni.index.resize(static_cast<std::size_t>(grid.size() * ni.neighbors()));
  std::size_t at = 0;
  for (i64 y = 0; y < grid.height; ++y) {
    const i64 y0 = std::clamp(y - ni.kernel_h / 2, i64{0}, grid.height - ni.kernel_h);
    for (i64 x = 0; x < grid.width; ++x) {
      const i64 x0 = std::clamp(x - ni.kernel_w / 2, i64{0}, grid.width - ni.kernel_w);
      for (i64 i = 0; i < ni.kernel_h; ++i) {
        for (i64 j = 0; j < ni.kernel_w; ++j) ni.index[at++] = static_cast<std::int32_t>((y0 + i) * grid.width + x0 + j);
      }
    }
  }
  return ni;
}

Tensor split_heads(const Tensor& x, i64 heads) {
  const i64 l = x.dim(0), d = x.dim(1) / heads;
  return permute(reshape(x, {l, heads, d}), {1, 0, 2});
}

Tensor merge_heads(const Tensor& x) {
  const i64 h = x.dim(0), l = x.dim(1), d = x.dim(2);
  return reshape(permute(x, {1, 0, 2}), {l, h * d});
}

namespace {

Tensor project(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

void check_tokens(const Tensor& f, GridShape grid, const char* op) {
  if (f.rank() != 2 || f.dim(0) != grid.size()) {
    throw DimensionError(std::string(op) + ": tokens " + shape_str(f.shape()) + " do not match a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
}

// softmax(q k^T / sqrt(d)) v over batched [B, L, d] operands.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  return matmul(softmax(scale(matmul(q, transpose(k)), s), -1), v);
}

Tensor output_projection(const Tensor& heads_out, const AttentionWeights& w) {
  return project(merge_heads(heads_out), w.out, w.out_bias);
}

}  // namespace

Tensor full_attention(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg) {
  cfg.validate(f.dim(1));
  auto q = split_heads(project(f, w.query, w.query_bias), cfg.heads);
  auto k = split_heads(project(f, w.key, w.key_bias), cfg.heads);
  auto v = split_heads(project(f, w.value, w.value_bias), cfg.heads);
  return output_projection(scaled_dot_attention(q, k, v), w);
}

Tensor neighborhood_attention(const Tensor& q, const Tensor& k, const Tensor& v, const NeighborhoodIndex& index) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.rank() != 3 || v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1) ||
      q.dim(1) != index.grid.size()) {
    throw DimensionError("neighborhood_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " inconsistent with index over " +
                         std::to_string(index.grid.size()) + " locations");
  }
  kernels::GatherAttentionDims d{q.dim(0), q.dim(1), index.neighbors(), q.dim(2), v.dim(2)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.key_dim));
  std::vector<double> out(static_cast<std::size_t>(d.heads * d.length * d.value_dim));
  auto attn = std::make_shared<std::vector<double>>(static_cast<std::size_t>(d.heads * d.length * d.neighbors));
  auto idx = std::make_shared<std::vector<std::int32_t>>(index.index);
  kernels::gather_attention_forward(d, q.ptr(), k.ptr(), v.ptr(), *idx, scale, out.data(), attn->data());
  return detail::record(Tensor({d.heads, d.length, d.value_dim}, std::move(out)), {q, k, v},
                        [q, k, v, d, scale, attn, idx](std::span<const double> g, GradSlots gi) {
                          kernels::gather_attention_backward(d, q.ptr(), k.ptr(), v.ptr(), *idx, scale, attn->data(),
                                                             g.data(), gi[0] ? gi[0]->data() : nullptr,
                                                             gi[1] ? gi[1]->data() : nullptr,
                                                             gi[2] ? gi[2]->data() : nullptr);
                        });
}

Tensor nmsa(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid) {
  check_tokens(f, grid, "nmsa");
  cfg.validate(f.dim(1));
  const auto index = neighborhood_index(grid, cfg.neighborhood);
  auto q = split_heads(project(f, w.query, w.query_bias), cfg.heads);
  auto k = split_heads(project(f, w.key, w.key_bias), cfg.heads);
  auto v = split_heads(project(f, w.value, w.value_bias), cfg.heads);
  return output_projection(neighborhood_attention(q, k, v, index), w);
}

Tensor wmsa(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid, i64 window) {
  check_tokens(f, grid, "wmsa");
  cfg.validate(f.dim(1));
  if (window < 1) throw DimensionError("wmsa: window must be >= 1");
  const i64 wh = std::min(window, grid.height), ww = std::min(window, grid.width);
  if (grid.height % wh || grid.width % ww) {
    throw DimensionError("wmsa: grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                         " is not divisible by window " + std::to_string(window));
  }
  const i64 nwy = grid.height / wh, nwx = grid.width / ww, nwin = nwy * nwx, area = wh * ww;
  // Token order grouped window by window, and its inverse.
  std::vector<std::int32_t> order(static_cast<std::size_t>(grid.size())), inverse(order.size());
  std::size_t at = 0;
  for (i64 a = 0; a < nwy; ++a) {
    for (i64 b = 0; b < nwx; ++b) {
      for (i64 i = 0; i < wh; ++i) {
        for (i64 j = 0; j < ww; ++j) {
          const auto tok = static_cast<std::int32_t>((a * wh + i) * grid.width + b * ww + j);
          inverse[static_cast<std::size_t>(tok)] = static_cast<std::int32_t>(at);
          order[at++] = tok;
        }
      }
    }
  }
  auto windows = [&](const Tensor& x, i64 d) {
    // [L, H*d] -> [nwin*H, area, d]
    auto r = reshape(gather_rows(x, order), {nwin, area, cfg.heads, d});
    return reshape(permute(r, {0, 2, 1, 3}), {nwin * cfg.heads, area, d});
  };
  auto q = windows(project(f, w.query, w.query_bias), cfg.key_dim);
  auto k = windows(project(f, w.key, w.key_bias), cfg.key_dim);
  auto v = windows(project(f, w.value, w.value_bias), cfg.value_dim);
  auto o = scaled_dot_attention(q, k, v);  // [nwin*H, area, dv]
  o = reshape(permute(reshape(o, {nwin, cfg.heads, area, cfg.value_dim}), {0, 2, 1, 3}),
              {grid.size(), cfg.heads * cfg.value_dim});
  return project(gather_rows(o, inverse), w.out, w.out_bias);
}

Tensor dmsa_offsets(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid) {
  check_tokens(f, grid, "dmsa");
  const i64 h = cfg.heads, dk = cfg.key_dim, l = grid.size();
  auto q = split_heads(project(f, w.query, w.query_bias), h);                        // [H, L, dk]
  auto qmap = reshape(permute(q, {0, 2, 1}), {h * dk, grid.height, grid.width});     // per-head query maps
  auto hidden = gelu(conv2d(qmap, w.offset_dw, w.offset_dw_bias, {1, kOffsetKernel / 2, 1, h * dk}));
  auto off = conv2d(hidden, w.offset_pw, w.offset_pw_bias, {1, 0, 1, h});            // [2H, Hs, Ws]
  return permute(reshape(off, {h, 2, l}), {0, 2, 1});                                // [H, L, 2]
}

Tensor dmsa(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid) {
  check_tokens(f, grid, "dmsa");
  cfg.validate(f.dim(1));
  const i64 h = cfg.heads, df = f.dim(1);
  auto q = split_heads(project(f, w.query, w.query_bias), h);
  auto positions = add(dmsa_offsets(f, w, cfg, grid), lattice_positions(grid.height, grid.width));
  // f~_h = phi(f; p + dp_h): [H, d_f, L] -> [H, L, d_f]
  auto sampled = transpose(grid_sample(tokens_to_map(f, grid.height, grid.width), positions));
  auto head_weights = [&](const Tensor& wm, const Tensor& bias, i64 d) {
    return std::pair{permute(reshape(wm, {df, h, d}), {1, 0, 2}), reshape(bias, {h, 1, d})};
  };
  auto [wk, bk] = head_weights(w.key, w.key_bias, cfg.key_dim);
  auto [wv, bv] = head_weights(w.value, w.value_bias, cfg.value_dim);
  auto k = add(matmul(sampled, wk), bk);
  auto v = add(matmul(sampled, wv), bv);
  return output_projection(scaled_dot_attention(q, k, v), w);
}

Tensor attend(const Tensor& f, const AttentionWeights& w, const AttentionConfig& cfg, GridShape grid) {
  switch (cfg.kind) {
    case AttentionKind::kDmsa: return dmsa(f, w, cfg, grid);
    case AttentionKind::kNmsa: return nmsa(f, w, cfg, grid);
    case AttentionKind::kWmsa: return wmsa(f, w, cfg, grid, cfg.window);
    case AttentionKind::kFull: check_tokens(f, grid, "full_attention"); return full_attention(f, w, cfg);
  }
  throw ConfigError("unknown attention kind");
}

AttentionLayer AttentionLayer::create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                      i64 embed_dim, const AttentionConfig& cfg) {
  cfg.validate(embed_dim);
  AttentionLayer a;
  a.config = cfg;
  const i64 hk = cfg.heads * cfg.key_dim, hv = cfg.heads * cfg.value_dim;
  auto weight = [&](const std::string& n, Shape s) {
    return params.add(prefix + "." + n, init::trunc_normal(std::move(s), rng, prefix + "." + n));
  };
  auto zeros = [&](const std::string& n, Shape s) { return params.add(prefix + "." + n, Tensor::zeros(std::move(s))); };
  a.query = weight("query", {embed_dim, hk});
  a.query_bias = zeros("query_bias", {hk});
  a.key = weight("key", {embed_dim, hk});
  a.key_bias = zeros("key_bias", {hk});
  a.value = weight("value", {embed_dim, hv});
  a.value_bias = zeros("value_bias", {hv});
  a.out = weight("out", {hv, embed_dim});
  a.out_bias = zeros("out_bias", {embed_dim});
  if (cfg.kind == AttentionKind::kDmsa) {
    a.has_offsets = true;
    a.offset_dw = weight("offset.dw", {hk, 1, kOffsetKernel, kOffsetKernel});
    a.offset_dw_bias = zeros("offset.dw_bias", {hk});
    a.offset_pw = zeros("offset.pw", {2 * cfg.heads, cfg.key_dim, 1, 1});
    a.offset_pw_bias = zeros("offset.pw_bias", {2 * cfg.heads});
  }
  return a;
}

AttentionWeights AttentionLayer::weights(const ParameterStore& params) const {
  AttentionWeights w{params[query], params[query_bias], params[key], params[key_bias],
                     params[value], params[value_bias], params[out],  params[out_bias],
                     {},            {},                 {},           {}};
  if (has_offsets) {
    w.offset_dw = params[offset_dw];
    w.offset_dw_bias = params[offset_dw_bias];
    w.offset_pw = params[offset_pw];
    w.offset_pw_bias = params[offset_pw_bias];
  }
  return w;
}

Tensor AttentionLayer::forward(const ParameterStore& params, const Tensor& f, GridShape grid) const {
  return attend(f, weights(params), config, grid);
}

TransformerBlock TransformerBlock::create(ParameterStore& params, const SplitMix64& rng, const std::string& prefix,
                                          i64 embed_dim, const AttentionConfig& cfg) {
  TransformerBlock b;
  b.attention = AttentionLayer::create(params, rng, prefix + ".attn", embed_dim, cfg);
  b.norm1_gain = params.add(prefix + ".norm1.gain", Tensor::full({embed_dim}, 1.0));
  b.norm1_shift = params.add(prefix + ".norm1.shift", Tensor::zeros({embed_dim}));
  b.norm2_gain = params.add(prefix + ".norm2.gain", Tensor::full({embed_dim}, 1.0));
  b.norm2_shift = params.add(prefix + ".norm2.shift", Tensor::zeros({embed_dim}));
  const i64 hidden = kMlpRatio * embed_dim;
  b.fc1 = params.add(prefix + ".mlp.fc1", init::trunc_normal({embed_dim, hidden}, rng, prefix + ".mlp.fc1"));
  b.fc1_bias = params.add(prefix + ".mlp.fc1_bias", Tensor::zeros({hidden}));
  b.fc2 = params.add(prefix + ".mlp.fc2", init::trunc_normal({hidden, embed_dim}, rng, prefix + ".mlp.fc2"));
  b.fc2_bias = params.add(prefix + ".mlp.fc2_bias", Tensor::zeros({embed_dim}));
  return b;
}

Tensor TransformerBlock::forward(const ParameterStore& params, const Tensor& f, GridShape grid) const {
  auto x = add(f, attention.forward(params, layer_norm(f, params[norm1_gain], params[norm1_shift]), grid));
  auto h = layer_norm(x, params[norm2_gain], params[norm2_shift]);
  auto m = project(gelu(project(h, params[fc1], params[fc1_bias])), params[fc2], params[fc2_bias]);
  return add(x, m);
}

Tensor transformer_block(const TransformerBlock& block, const ParameterStore& params, const Tensor& f,
                         GridShape grid) {
  return block.forward(params, f, grid);
}

}  // namespace agile
