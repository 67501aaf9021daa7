#include "agile/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "agile/error.hpp"
#include "agile/kernels.hpp"
#include "agile/ops.hpp"
#include "agile/rng.hpp"

namespace agile {

using i64 = std::int64_t;

double median_micros(const std::function<void()>& fn, int runs) {
  fn();
  std::vector<double> t;
  for (int r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

namespace {

i64 parse_positive(const std::string& s) {
  i64 v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 1) throw ConfigError("sizes: invalid extent '" + s + "'");
  return v;
}

std::vector<double> random_values(SplitMix64& rng, i64 n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

GridShape parse_grid_size(const std::string& token) {
  const auto x = token.find('x');
  if (x != std::string::npos) return {parse_positive(token.substr(0, x)), parse_positive(token.substr(x + 1))};
  const i64 l = parse_positive(token);
  i64 h = static_cast<i64>(std::sqrt(static_cast<double>(l)));
  while (l % h) --h;
  return {h, l / h};
}

std::vector<GridShape> parse_grid_sizes(const std::string& list) {
  std::vector<GridShape> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(parse_grid_size(tok));
  }
  if (out.empty()) throw ConfigError("sizes: no grid sizes given");
  return out;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "variant,L,micros\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%.3f\n", r.variant.c_str(), static_cast<long long>(r.length), r.micros);
    out += buf;
  }
  return out;
}

const std::vector<std::string>& bench_ops() {
  static const std::vector<std::string> ops{"attention", "deform_conv", "grid_sample"};
  return ops;
}

std::vector<BenchRow> run_bench(const std::string& op, const std::vector<GridShape>& sizes, std::uint64_t seed,
                                int runs) {
  std::vector<BenchRow> rows;
  auto rng = SplitMix64(seed).split("bench");
  for (const auto grid : sizes) {
    const i64 l = grid.size();
    if (op == "attention") {
      const i64 df = 16;
      auto f = Tensor({l, df}, random_values(rng, l * df));
      auto w = [&](i64 r, i64 c) { return Tensor({r, c}, random_values(rng, r * c)); };
      const auto zero = Tensor::zeros({df});
      AttentionWeights aw{w(df, df), zero, w(df, df), zero, w(df, df), zero, w(df, df), zero, {}, {}, {}, {}};
      for (const auto kind : {AttentionKind::kNmsa, AttentionKind::kWmsa, AttentionKind::kFull}) {
        const auto cfg = AttentionConfig::for_dim(df, 1, kind, 7, 8);
        rows.push_back({to_string(kind), l, median_micros([&] { attend(f, aw, cfg, grid); }, runs)});
      }
    } else if (op == "deform_conv") {
      kernels::ConvGeometry g{8, grid.height, grid.width, 8, 3, 3, 1, 1, 1, 1};
      const auto in = random_values(rng, 8 * l), wt = random_values(rng, 8 * 8 * 9);
      auto off = random_values(rng, 18 * l);
      std::vector<double> out(static_cast<std::size_t>(8 * l));
      const kernels::OffsetView ov{off.data(), kernels::OffsetMode::kPerTap};
      rows.push_back({"reference", l, median_micros([&] {
                        kernels::reference::conv2d_forward(g, in.data(), ov, wt.data(), nullptr, out.data());
                      }, runs)});
      rows.push_back({"parallel", l, median_micros([&] {
                        kernels::conv2d_forward(g, in.data(), ov, wt.data(), nullptr, out.data());
                      }, runs)});
    } else if (op == "grid_sample") {
      const i64 c = 16;
      const auto f = random_values(rng, c * l);
      std::vector<double> pos(static_cast<std::size_t>(2 * l));
      for (i64 i = 0; i < l; ++i) {
        pos[static_cast<std::size_t>(2 * i)] = rng.uniform(0.0, static_cast<double>(grid.height - 1));
        pos[static_cast<std::size_t>(2 * i + 1)] = rng.uniform(0.0, static_cast<double>(grid.width - 1));
      }
      std::vector<double> out(static_cast<std::size_t>(c * l));
      rows.push_back({"reference", l, median_micros([&] {
                        kernels::reference::grid_sample2d_forward(c, grid.height, grid.width, f.data(), 1, l,
                                                                  pos.data(), out.data());
                      }, runs)});
      rows.push_back({"parallel", l, median_micros([&] {
                        kernels::grid_sample2d_forward(c, grid.height, grid.width, f.data(), 1, l, pos.data(),
                                                       out.data());
                      }, runs)});
    } else {
      throw ConfigError("unknown bench op '" + op + "'");
    }
  }
  return rows;
}

}  // namespace agile
