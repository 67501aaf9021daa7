#include <cmath>
#include <vector>

#include "agile/kernels.hpp"
#include "agile/parallel.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::kernels;

namespace {

std::vector<double> buf(SplitMix64& rng, i64 n, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Restores the default thread count when a test leaves.
struct ThreadScope {
  int saved = max_threads();
  ~ThreadScope() { set_threads(saved); }
};

struct ConvCase {
  ConvGeometry g;
  OffsetMode mode;
};

std::vector<ConvCase> conv_cases() {
  std::vector<ConvCase> out;
  ConvGeometry a{3, 7, 6, 4, 3, 3, 1, 1, 1, 1};
  ConvGeometry b{4, 9, 8, 2, 5, 5, 2, 2, 1, 1};
  ConvGeometry c{4, 6, 6, 4, 3, 3, 1, 1, 1, 4};
  ConvGeometry d{2, 8, 7, 3, 3, 3, 2, 2, 2, 1};
  for (const auto& g : {a, b, c, d}) {
    out.push_back({g, OffsetMode::kPerTap});
    out.push_back({g, OffsetMode::kShared});
  }
  return out;
}

struct ConvResult {
  std::vector<double> out, gi, goff, gw, gb;
};

template <class Fwd, class Bwd>
ConvResult run_conv(const ConvCase& c, bool offsets, std::uint64_t seed, Fwd fwd, Bwd bwd) {
  SplitMix64 rng(seed);
  const auto& g = c.g;
  const i64 oh = g.out_h(), ow = g.out_w();
  const i64 oc = c.mode == OffsetMode::kPerTap ? 2 * g.taps() : 2;
  const auto in = buf(rng, g.in_channels * g.in_h * g.in_w);
  const auto off = buf(rng, oc * oh * ow, -1.7, 1.7);
  const auto w = buf(rng, g.out_channels * (g.in_channels / g.groups) * g.taps());
  const auto bias = buf(rng, g.out_channels);
  const auto go = buf(rng, g.out_channels * oh * ow);
  const OffsetView view{offsets ? off.data() : nullptr, c.mode};
  ConvResult r;
  r.out.assign(go.size(), 0.0);
  r.gi.assign(in.size(), 0.0);
  r.goff.assign(off.size(), 0.0);
  r.gw.assign(w.size(), 0.0);
  r.gb.assign(bias.size(), 0.0);
  fwd(g, in.data(), view, w.data(), bias.data(), r.out.data());
  bwd(g, in.data(), view, w.data(), go.data(), r.gi.data(), offsets ? r.goff.data() : nullptr, r.gw.data(),
      r.gb.data());
  return r;
}

}  // namespace

TEST_CASE("gemm matches the reference for strided and transposed operands") {
  SplitMix64 rng(1);
  for (auto [m, n, k] : std::vector<std::array<i64, 3>>{{1, 1, 1}, {7, 5, 3}, {33, 17, 65}, {64, 64, 64}}) {
    const auto a = buf(rng, m * k), b = buf(rng, k * n), c0 = buf(rng, m * n);
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        for (bool acc : {false, true}) {
          auto c1 = c0, c2 = c0;
          const i64 ars = ta ? 1 : k, acs = ta ? m : 1, brs = tb ? 1 : n, bcs = tb ? k : 1;
          gemm(m, n, k, a.data(), ars, acs, b.data(), brs, bcs, c1.data(), acc);
          reference::gemm(m, n, k, a.data(), ars, acs, b.data(), brs, bcs, c2.data(), acc);
          CHECK(diff(c1, c2) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("conv2d forward and backward match the direct reference") {
  std::uint64_t seed = 10;
  for (const auto& c : conv_cases()) {
    for (bool offsets : {false, true}) {
      const auto p = run_conv(c, offsets, seed, conv2d_forward, conv2d_backward);
      const auto r = run_conv(c, offsets, seed, reference::conv2d_forward, reference::conv2d_backward);
      CHECK(diff(p.out, r.out) < 1e-12);
      CHECK(diff(p.gi, r.gi) < 1e-12);
      CHECK(diff(p.goff, r.goff) < 1e-12);
      CHECK(diff(p.gw, r.gw) < 1e-12);
      CHECK(diff(p.gb, r.gb) < 1e-12);
      ++seed;
    }
  }
}

TEST_CASE("grid_sample2d matches the reference, including out-of-range points") {
  SplitMix64 rng(2);
  const i64 c = 3, h = 6, w = 9, b = 2, l = 40;
  const auto f = buf(rng, c * h * w);
  auto pos = buf(rng, b * l * 2, -2, 10);
  pos[0] = 2.0;  // on the lattice
  pos[1] = 3.0;
  const auto go = buf(rng, b * c * l);
  std::vector<double> o1(go.size()), o2(go.size());
  grid_sample2d_forward(c, h, w, f.data(), b, l, pos.data(), o1.data());
  reference::grid_sample2d_forward(c, h, w, f.data(), b, l, pos.data(), o2.data());
  CHECK(diff(o1, o2) < 1e-12);
  std::vector<double> gf1(f.size()), gf2(f.size()), gp1(pos.size()), gp2(pos.size());
  grid_sample2d_backward(c, h, w, f.data(), b, l, pos.data(), go.data(), gf1.data(), gp1.data());
  reference::grid_sample2d_backward(c, h, w, f.data(), b, l, pos.data(), go.data(), gf2.data(), gp2.data());
  CHECK(diff(gf1, gf2) < 1e-12);
  CHECK(diff(gp1, gp2) < 1e-12);
}

TEST_CASE("gather attention matches the reference and rows sum to one") {
  SplitMix64 rng(3);
  const GatherAttentionDims d{3, 20, 7, 4, 5};
  const auto q = buf(rng, d.heads * d.length * d.key_dim, -3, 3);
  const auto k = buf(rng, d.heads * d.length * d.key_dim, -3, 3);
  const auto v = buf(rng, d.heads * d.length * d.value_dim);
  std::vector<std::int32_t> index(static_cast<std::size_t>(d.length * d.neighbors));
  for (auto& i : index) i = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(d.length)));
  const double scale = 1.0 / std::sqrt(4.0);
  std::vector<double> o1(static_cast<std::size_t>(d.heads * d.length * d.value_dim)), o2 = o1;
  std::vector<double> a1(static_cast<std::size_t>(d.heads * d.length * d.neighbors)), a2 = a1;
  gather_attention_forward(d, q.data(), k.data(), v.data(), index, scale, o1.data(), a1.data());
  reference::gather_attention_forward(d, q.data(), k.data(), v.data(), index, scale, o2.data(), a2.data());
  CHECK(diff(o1, o2) < 1e-12);
  CHECK(diff(a1, a2) < 1e-12);
  for (i64 row = 0; row < d.heads * d.length; ++row) {
    double s = 0.0;
    for (i64 j = 0; j < d.neighbors; ++j) s += a1[static_cast<std::size_t>(row * d.neighbors + j)];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  const auto go = buf(rng, static_cast<i64>(o1.size()));
  std::vector<double> gq1(q.size()), gq2(q.size()), gk1(k.size()), gk2(k.size()), gv1(v.size()), gv2(v.size());
  gather_attention_backward(d, q.data(), k.data(), v.data(), index, scale, a1.data(), go.data(), gq1.data(),
                            gk1.data(), gv1.data());
  reference::gather_attention_backward(d, q.data(), k.data(), v.data(), index, scale, a2.data(), go.data(),
                                       gq2.data(), gk2.data(), gv2.data());
  CHECK(diff(gq1, gq2) < 1e-12);
  CHECK(diff(gk1, gk2) < 1e-12);
  CHECK(diff(gv1, gv2) < 1e-12);
}

TEST_CASE("parallel kernels are bit-identical across thread counts") {
  ThreadScope scope;
  const auto cases = conv_cases();
  std::vector<ConvResult> one;
  set_threads(1);
  for (std::size_t i = 0; i < cases.size(); ++i) one.push_back(run_conv(cases[i], true, 50 + i, conv2d_forward, conv2d_backward));
  set_threads(3);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto r = run_conv(cases[i], true, 50 + i, conv2d_forward, conv2d_backward);
    CHECK(r.out == one[i].out);
    CHECK(r.gi == one[i].gi);
    CHECK(r.goff == one[i].goff);
    CHECK(r.gw == one[i].gw);
    CHECK(r.gb == one[i].gb);
  }

  SplitMix64 rng(4);
  const i64 m = 37, n = 29, k = 41;
  const auto a = buf(rng, m * k), b = buf(rng, k * n);
  std::vector<double> c1(static_cast<std::size_t>(m * n)), c3 = c1;
  set_threads(1);
  gemm(m, n, k, a.data(), k, 1, b.data(), n, 1, c1.data(), false);
  set_threads(3);
  gemm(m, n, k, a.data(), k, 1, b.data(), n, 1, c3.data(), false);
  CHECK(c1 == c3);

  const i64 ch = 2, h = 8, w = 8, l = 50;
  const auto f = buf(rng, ch * h * w), pos = buf(rng, l * 2, -1, 9), go = buf(rng, ch * l);
  std::vector<double> gf1(f.size()), gf3(f.size()), gp1(pos.size()), gp3(pos.size());
  set_threads(1);
  grid_sample2d_backward(ch, h, w, f.data(), 1, l, pos.data(), go.data(), gf1.data(), gp1.data());
  set_threads(3);
  grid_sample2d_backward(ch, h, w, f.data(), 1, l, pos.data(), go.data(), gf3.data(), gp3.data());
  CHECK(gf1 == gf3);
  CHECK(gp1 == gp3);
}

TEST_CASE("set_threads and max_threads") {
  ThreadScope scope;
  set_threads(2);
  CHECK(max_threads() == 2);
  set_threads(1);
  CHECK(max_threads() == 1);
}
