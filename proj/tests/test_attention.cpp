#include <algorithm>
#include <cmath>
#include <set>

#include "agile/attention.hpp"
#include "agile/error.hpp"
#include "agile/gradcheck.hpp"
#include "agile/sampling.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::test;
using namespace agile::oracle;

namespace {

using i64 = std::int64_t;

AttentionConfig cfg_for(i64 df, i64 heads, AttentionKind kind, i64 k = 7, i64 window = 4) {
  return AttentionConfig::for_dim(df, heads, kind, k, window);
}

}  // namespace

TEST_CASE("full attention matches the loop oracle") {
  SplitMix64 rng(1);
  const auto f = rand_tensor(rng, {12, 8});
  const auto w = random_weights(rng, 8, 2, false);
  const auto y = full_attention(f, w, cfg_for(8, 2, AttentionKind::kFull));
  CHECK(max_abs_diff(y, attention_oracle(f, same_source(f, 2), w, 2, all_keys(12))) < 1e-12);
}

TEST_CASE("zero-offset DMSA equals standard multi-head self-attention") {
  SplitMix64 rng(2);
  for (i64 heads : {1, 2, 4}) {
    const GridShape g{4, 5};
    const auto f = rand_tensor(rng, {g.size(), 8});
    auto w = random_weights(rng, 8, heads, true);
    w.offset_dw = Tensor::zeros(w.offset_dw.shape());
    w.offset_dw_bias = Tensor::zeros(w.offset_dw_bias.shape());
    w.offset_pw = Tensor::zeros(w.offset_pw.shape());
    w.offset_pw_bias = Tensor::zeros(w.offset_pw_bias.shape());
    const auto cfg = cfg_for(8, heads, AttentionKind::kDmsa);
    CHECK(max_abs_diff(dmsa(f, w, cfg, g), full_attention(f, w, cfg)) < 1e-12);
  }
}

TEST_CASE("DMSA with offsets matches the loop oracle over per-head sampled tokens") {
  SplitMix64 rng(3);
  const GridShape g{4, 4};
  const i64 heads = 2;
  const auto f = rand_tensor(rng, {16, 8});
  const auto w = random_weights(rng, 8, heads, true);
  const auto cfg = cfg_for(8, heads, AttentionKind::kDmsa);
  const auto off = dmsa_offsets(f, w, cfg, g);
  REQUIRE(off.shape() == Shape{heads, 16, 2});
  const auto map = tokens_to_map(f, 4, 4);
  std::vector<Tensor> sampled;
  for (i64 h = 0; h < heads; ++h) {
    const auto pos = add(reshape(slice(off, 0, h, 1), {16, 2}), lattice_positions(4, 4));
    sampled.push_back(transpose(grid_sample(map, pos)));
  }
  CHECK(max_abs_diff(dmsa(f, w, cfg, g), attention_oracle(f, sampled, w, heads, all_keys(16))) < 1e-12);
}

TEST_CASE("fresh DMSA layers produce zero offsets") {
  SplitMix64 rng(4);
  ParameterStore ps;
  const auto layer = AttentionLayer::create(ps, rng, "attn", 8, cfg_for(8, 2, AttentionKind::kDmsa));
  const auto off = dmsa_offsets(rand_tensor(rng, {16, 8}), layer.weights(ps), layer.config, {4, 4});
  for (i64 i = 0; i < off.numel(); ++i) CHECK(off[i] == 0.0);
}

TEST_CASE("DMSA on a single token is the projected sampled value") {
  SplitMix64 rng(5);
  const auto f = rand_tensor(rng, {1, 4});
  const auto w = random_weights(rng, 4, 1, true);
  const auto cfg = cfg_for(4, 1, AttentionKind::kDmsa);
  const auto off = dmsa_offsets(f, w, cfg, {1, 1});
  const auto ft = transpose(grid_sample(tokens_to_map(f, 1, 1), reshape(off, {1, 2})));
  const auto v = tensor({1, 4}, project(ft, w.value, w.value_bias));
  const auto expect = tensor({1, 4}, project(v, w.out, w.out_bias));
  CHECK(max_abs_diff(dmsa(f, w, cfg, {1, 1}), expect) < 1e-12);
}

TEST_CASE("DMSA gradcheck on a 4x4 grid with two heads and nonzero offsets") {
  const auto* op = find_gradcheck_op("dmsa");
  REQUIRE(op);
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto c = op->make(s);
    std::vector<Tensor> xs;
    for (const auto& in : c.inputs) xs.push_back(in.value);
    CHECK(fd_worst(c.fn, xs, s) < 1e-4);
  }
}

TEST_CASE("NMSA equals the per-location loop oracle on 6x6 grids") {
  SplitMix64 rng(6);
  for (i64 k : {3, 5}) {
    for (i64 heads : {1, 2}) {
      const GridShape g{6, 6};
      const auto f = rand_tensor(rng, {36, 8});
      const auto w = random_weights(rng, 8, heads, false);
      const auto y = nmsa(f, w, cfg_for(8, heads, AttentionKind::kNmsa, k), g);
      CHECK(max_abs_diff(y, attention_oracle(f, same_source(f, heads), w, heads, patch_keys(g, k))) < 1e-12);
    }
  }
}

TEST_CASE("NMSA with full cover equals full attention") {
  SplitMix64 rng(7);
  const GridShape g{5, 4};
  const auto f = rand_tensor(rng, {20, 8});
  const auto w = random_weights(rng, 8, 2, false);
  for (i64 k : {5, 7, 9}) {
    const auto cfg = cfg_for(8, 2, AttentionKind::kNmsa, k);
    CHECK(max_abs_diff(nmsa(f, w, cfg, g), full_attention(f, w, cfg)) < 1e-12);
  }
}

TEST_CASE("NMSA on a 1x1 map is the value projection") {
  SplitMix64 rng(8);
  const auto f = rand_tensor(rng, {1, 4});
  const auto w = random_weights(rng, 4, 2, false);
  const auto v = tensor({1, 4}, project(f, w.value, w.value_bias));
  CHECK(max_abs_diff(nmsa(f, w, cfg_for(4, 2, AttentionKind::kNmsa), {1, 1}),
                     tensor({1, 4}, project(v, w.out, w.out_bias))) < 1e-12);
}

TEST_CASE("WMSA equals the per-window loop oracle") {
  SplitMix64 rng(9);
  const GridShape g{4, 4};
  const auto f = rand_tensor(rng, {16, 8});
  const auto w = random_weights(rng, 8, 2, false);
  const auto cfg = cfg_for(8, 2, AttentionKind::kWmsa, 7, 2);
  CHECK(max_abs_diff(wmsa(f, w, cfg, g, 2), attention_oracle(f, same_source(f, 2), w, 2, window_keys(g, 2))) <
        1e-12);
  const GridShape r{4, 6};
  const auto fr = rand_tensor(rng, {24, 8});
  CHECK(max_abs_diff(wmsa(fr, w, cfg, r, 2), attention_oracle(fr, same_source(fr, 2), w, 2, window_keys(r, 2))) <
        1e-12);
}

TEST_CASE("WMSA with a full-extent window equals full attention") {
  SplitMix64 rng(10);
  const auto f = rand_tensor(rng, {16, 8});
  const auto w = random_weights(rng, 8, 2, false);
  const auto cfg = cfg_for(8, 2, AttentionKind::kWmsa);
  CHECK(max_abs_diff(wmsa(f, w, cfg, {4, 4}, 4), full_attention(f, w, cfg)) < 1e-12);
}

TEST_CASE("WMSA windows are isolated") {
  SplitMix64 rng(11);
  const auto f = rand_tensor(rng, {16, 4});
  const auto w = random_weights(rng, 4, 1, false);
  const auto cfg = cfg_for(4, 1, AttentionKind::kWmsa);
  const auto y0 = wmsa(f, w, cfg, {4, 4}, 2);
  const auto y1 = wmsa(with_value(f, 0, f[0] + 5.0), w, cfg, {4, 4}, 2);  // token (0,0), window 0
  for (i64 loc = 0; loc < 16; ++loc) {
    const bool same_window = loc / 4 < 2 && loc % 4 < 2;
    for (i64 c = 0; c < 4; ++c) {
      if (same_window) continue;
      CHECK(y0[loc * 4 + c] == y1[loc * 4 + c]);
    }
  }
  CHECK(y0[0] != y1[0]);
}

TEST_CASE("WMSA on an indivisible grid is a dimension error") {
  SplitMix64 rng(12);
  const auto w = random_weights(rng, 4, 1, false);
  CHECK_THROWS_AS(wmsa(rand_tensor(rng, {15, 4}), w, cfg_for(4, 1, AttentionKind::kWmsa), {3, 5}, 2),
                  DimensionError);
}

TEST_CASE("all variants preserve token count and embedding dim") {
  SplitMix64 rng(13);
  const GridShape g{4, 8};
  const auto f = rand_tensor(rng, {32, 8});
  const auto w = random_weights(rng, 8, 2, true);
  for (auto kind : {AttentionKind::kDmsa, AttentionKind::kNmsa, AttentionKind::kWmsa, AttentionKind::kFull}) {
    CHECK(attend(f, w, cfg_for(8, 2, kind, 3, 4), g).shape() == Shape{32, 8});
  }
}

TEST_CASE("token count must match the grid") {
  SplitMix64 rng(14);
  const auto w = random_weights(rng, 4, 1, true);
  for (auto kind : {AttentionKind::kDmsa, AttentionKind::kNmsa, AttentionKind::kWmsa}) {
    CHECK_THROWS_AS(attend(rand_tensor(rng, {15, 4}), w, cfg_for(4, 1, kind, 3, 2), {4, 4}), DimensionError);
  }
}

TEST_CASE("neighborhood_index examples") {
  const auto idx = neighborhood_index({5, 5}, 3);
  auto block = [](i64 y0, i64 x0) {
    std::vector<std::int32_t> v;
    for (i64 y = y0; y < y0 + 3; ++y) {
      for (i64 x = x0; x < x0 + 3; ++x) v.push_back(static_cast<std::int32_t>(y * 5 + x));
    }
    return v;
  };
  auto of = [&](i64 loc) { return std::vector<std::int32_t>(idx.of(loc).begin(), idx.of(loc).end()); };
  CHECK(of(2 * 5 + 2) == block(1, 1));
  CHECK(of(0) == block(0, 0));
  CHECK(of(24) == block(2, 2));

  const auto big = neighborhood_index({7, 7}, 5);
  CHECK(big.neighbors() == 25);
  for (i64 loc = 0; loc < 49; ++loc) {
    const std::set<std::int32_t> u(big.of(loc).begin(), big.of(loc).end());
    CHECK(u.size() == 25);
    CHECK(*u.begin() >= 0);
    CHECK(*u.rbegin() < 49);
    CHECK(u.count(static_cast<std::int32_t>(loc)) == 1);
  }
  const auto clamped = neighborhood_index({3, 8}, 5);
  CHECK(clamped.kernel_h == 3);
  CHECK(clamped.kernel_w == 5);
}

TEST_CASE("attention config validation") {
  CHECK_THROWS_AS(cfg_for(8, 3, AttentionKind::kNmsa), ConfigError);
  CHECK_THROWS_AS(cfg_for(8, 2, AttentionKind::kNmsa, 4), ConfigError);
  CHECK_THROWS_AS(cfg_for(8, 2, AttentionKind::kNmsa, 0), ConfigError);
  CHECK(parse_attention_kind("dmsa") == AttentionKind::kDmsa);
  CHECK(to_string(AttentionKind::kWmsa) == "wmsa");
  CHECK_THROWS_AS(parse_attention_kind("swin"), ConfigError);
}

TEST_CASE("transformer block with zero weights is the identity") {
  SplitMix64 rng(15);
  ParameterStore ps;
  const auto block = TransformerBlock::create(ps, rng, "blk", 8, cfg_for(8, 2, AttentionKind::kDmsa));
  for (ParamId id = 0; id < ps.size(); ++id) ps.set(id, Tensor::zeros(ps[id].shape()));
  const auto f = rand_tensor(rng, {16, 8});
  CHECK(bit_equal(block.forward(ps, f, {4, 4}), f));
}

TEST_CASE("transformer block matches its composition") {
  SplitMix64 rng(16);
  ParameterStore ps;
  const auto block = TransformerBlock::create(ps, rng, "blk", 8, cfg_for(8, 2, AttentionKind::kNmsa, 3));
  for (ParamId id = 0; id < ps.size(); ++id) ps.set(id, rand_tensor(rng, ps[id].shape(), -0.5, 0.5));
  const auto f = rand_tensor(rng, {16, 8});
  auto x = add(f, nmsa(layer_norm(f, ps[block.norm1_gain], ps[block.norm1_shift]), block.attention.weights(ps),
                       block.attention.config, {4, 4}));
  auto h = gelu(add(matmul(layer_norm(x, ps[block.norm2_gain], ps[block.norm2_shift]), ps[block.fc1]),
                    ps[block.fc1_bias]));
  x = add(x, add(matmul(h, ps[block.fc2]), ps[block.fc2_bias]));
  CHECK(max_abs_diff(block.forward(ps, f, {4, 4}), x) < 1e-12);
  CHECK(ps[block.fc1].shape() == Shape{8, 32});
}

TEST_CASE("transformer block gradcheck at d_f=8 on a 4x4 grid") {
  const auto* op = find_gradcheck_op("transformer_block");
  REQUIRE(op);
  const auto c = op->make(3);
  std::vector<Tensor> xs;
  for (const auto& in : c.inputs) xs.push_back(in.value);
  CHECK(fd_worst(c.fn, xs, 3) < 1e-4);
}

TEST_CASE("blocks alternate NMSA and DMSA") {
  CHECK(alternating_kind(0, AttentionKind::kNmsa, AttentionKind::kDmsa) == AttentionKind::kNmsa);
  CHECK(alternating_kind(1, AttentionKind::kNmsa, AttentionKind::kDmsa) == AttentionKind::kDmsa);
  CHECK(alternating_kind(4, AttentionKind::kNmsa, AttentionKind::kDmsa) == AttentionKind::kNmsa);
}
