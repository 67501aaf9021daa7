// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance                 all criteria
//   acceptance --criterion 4   one criterion (repeatable)

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>

#include "agile/bench.hpp"
#include "agile/checkpoint.hpp"
#include "agile/commands.hpp"
#include "agile/deform.hpp"
#include "agile/gradcheck.hpp"
#include "agile/parallel.hpp"
#include "agile/posenc.hpp"
#include "agile/sampling.hpp"
#include "oracles.hpp"

using namespace agile;
using namespace agile::oracle;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Tracks the worst value of a named check against its bound.
struct Checks {
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  std::map<std::string, double> bound;
  void add(const std::string& name, double value, double limit) {
    if (!worst.count(name)) {
      order.push_back(name);
      worst[name] = 0.0;
    }
    worst[name] = std::max(worst[name], value);
    bound[name] = limit;
  }
  Verdict verdict() const {
    Verdict v;
    for (const auto& n : order) {
      const bool ok = worst.at(n) <= bound.at(n);
      v.pass = v.pass && ok;
      char buf[200];
      std::snprintf(buf, sizeof buf, "  %-34s worst=%.3e bound=%.0e %s\n", n.c_str(), worst.at(n), bound.at(n),
                    ok ? "ok" : "FAIL");
      v.detail += buf;
    }
    return v;
  }
};

Verdict gradient_suite(int trials) {
  const auto t0 = Clock::now();
  Checks checks;
  double max_abs_seen = 0.0;
  for (const auto& op : gradcheck_registry()) {
    double worst = 0.0, tol = 0.0, max_abs = 0.0;
    for (int t = 0; t < trials; ++t) {
      const auto c = op.make(static_cast<std::uint64_t>(t));
      tol = c.tolerance;
      const auto r = run_gradcheck(c, static_cast<std::uint64_t>(t));
      worst = std::max(worst, r.worst);
      for (const auto& g : r.groups) max_abs = std::max(max_abs, g.max_abs);
    }
    // Relative error is 0 where |analytic - numeric| is within the 1e-6 floor.
    checks.add(op.module + "/" + op.name, worst, std::nextafter(tol, 0.0));
    max_abs_seen = std::max(max_abs_seen, max_abs);
  }
  auto v = checks.verdict();
  const double secs = seconds_since(t0);
  v.pass = v.pass && secs < 300.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "  trials=%d max_abs_err=%.3e runtime=%.1fs (limit 300s)\n", trials, max_abs_seen, secs);
  v.detail += buf;
  return v;
}

Verdict degeneracy_suite() {
  SplitMix64 rng(101);
  Checks checks;
  for (int t = 0; t < 20; ++t) {
    const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.below(3)), cout = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t k = t % 2 ? 3 : 5, s = 1 + t % 2;
    const auto f = rand_tensor(rng, {cin, k + 3, k + 4});
    const auto w = rand_tensor(rng, {cout, cin, k, k});
    const auto b = rand_tensor(rng, {cout});
    const ConvOptions opt{s, k / 2, 1, 1};
    const auto y = deformable_conv2d(f, w, b, Tensor::zeros({2 * k * k, cin, k, k}), Tensor::zeros({2 * k * k}), opt);
    checks.add("zero-offset deform conv == conv", max_abs_diff(y, conv2d(f, w, b, opt)), 1e-12);
  }
  for (std::int64_t heads : {1, 2, 4}) {
    const GridShape g{4, 5};
    const auto f = rand_tensor(rng, {g.size(), 8});
    const auto w = random_weights(rng, 8, heads, false);
    const auto cfg = AttentionConfig::for_dim(8, heads, AttentionKind::kDmsa, 7, 4);
    checks.add("zero-offset DMSA == MHA", max_abs_diff(dmsa(f, w, cfg, g), full_attention(f, w, cfg)), 1e-12);
  }
  for (std::int64_t k : {5, 7}) {
    const GridShape g{5, 4};
    const auto f = rand_tensor(rng, {g.size(), 8});
    const auto w = random_weights(rng, 8, 2, false);
    const auto cfg = AttentionConfig::for_dim(8, 2, AttentionKind::kNmsa, k, 4);
    checks.add("full-cover NMSA == full", max_abs_diff(nmsa(f, w, cfg, g), full_attention(f, w, cfg)), 1e-12);
  }
  for (std::int64_t side : {2, 4}) {
    const auto f = rand_tensor(rng, {side * side, 8});
    const auto w = random_weights(rng, 8, 2, false);
    const auto cfg = AttentionConfig::for_dim(8, 2, AttentionKind::kWmsa, 7, side);
    checks.add("full-window WMSA == full", max_abs_diff(wmsa(f, w, cfg, {side, side}, side), full_attention(f, w, cfg)),
               1e-12);
  }
  for (std::int64_t c : {1, 3, 8}) {
    const auto f = rand_tensor(rng, {35, c});
    auto zero = [c](std::int64_t k) {
      return DepthwiseDeformBranch{Tensor::zeros({c, 1, k, k}), Tensor::zeros({c}), Tensor::zeros({2, c, k, k}),
                                   Tensor::zeros({2})};
    };
    const auto y = ms_depe(f, {zero(3), zero(5)}, {5, 7});
    const bool same = std::memcmp(y.data().data(), f.data().data(), sizeof(double) * f.data().size()) == 0;
    checks.add("zero-weight MS-DePE == identity", same ? 0.0 : 1.0, 0.0);
  }
  return checks.verdict();
}

Verdict brute_force_suite() {
  SplitMix64 rng(202);
  Checks checks;
  for (std::int64_t k : {3, 5}) {
    for (std::int64_t heads : {1, 2}) {
      const GridShape g{6, 6};
      const auto f = rand_tensor(rng, {36, 8});
      const auto w = random_weights(rng, 8, heads, false);
      const auto y = nmsa(f, w, AttentionConfig::for_dim(8, heads, AttentionKind::kNmsa, k, 4), g);
      checks.add("NMSA 6x6 vs loop", max_abs_diff(y, attention_oracle(f, same_source(f, heads), w, heads, patch_keys(g, k))),
                 1e-12);
    }
  }
  for (int t = 0; t < 100; ++t) {
    const auto a = random_blobs(rng, 32), b = random_blobs(rng, 32);
    checks.add("HD95 vs exhaustive (100 pairs)", std::abs(hd95_metric(a, b, 1) - oracle_hd95(a, b, 1)), 1e-9);
  }
  const std::int64_t c = 3, h = 5, w = 7, n = 200;
  const auto f = rand_tensor(rng, {c, h, w});
  std::vector<double> p;
  for (std::int64_t i = 0; i < n; ++i) {
    p.push_back(rng.uniform(-1.5, h + 0.5));
    p.push_back(rng.uniform(-1.5, w + 0.5));
  }
  const auto s = grid_sample(f, Tensor({n, 2}, p));
  auto at = [&](std::int64_t ch, std::int64_t y, std::int64_t x) {
    return y < 0 || y >= h || x < 0 || x >= w ? 0.0 : f[(ch * h + y) * w + x];
  };
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t l = 0; l < n; ++l) {
      const double y = p[2 * l], x = p[2 * l + 1], y0 = std::floor(y), x0 = std::floor(x), ty = y - y0, tx = x - x0;
      const auto iy = static_cast<std::int64_t>(y0), ix = static_cast<std::int64_t>(x0);
      const double blend = (1 - ty) * (1 - tx) * at(ch, iy, ix) + (1 - ty) * tx * at(ch, iy, ix + 1) +
                           ty * (1 - tx) * at(ch, iy + 1, ix) + ty * tx * at(ch, iy + 1, ix + 1);
      checks.add("bilinear vs 4-corner blend", std::abs(s[ch * n + l] - blend), 1e-12);
    }
  }
  return checks.verdict();
}

Verdict synthetic_training() {
  const auto t0 = Clock::now();
  const RunConfig cfg;  // Nano, 64x64, 200/50, 2000 steps, lambda 0.6
  const auto every = cfg.train.steps / 10;
  const auto outcome = train_from_config(cfg, [&](const LogRow& r) {
    if ((r.step + 1) % every == 0) {
      std::fprintf(stderr, "  step %lld loss %.4f dsc %.4f\n", static_cast<long long>(r.step + 1), r.loss, r.dsc);
    }
  });
  Verdict v;
  v.pass = outcome.metrics.dsc_mean >= 0.90;
  char buf[200];
  std::snprintf(buf, sizeof buf, "  test dsc_mean=%.4f (bar 0.90) runtime=%.0fs (target 1800s)\n",
                outcome.metrics.dsc_mean, seconds_since(t0));
  v.detail = buf + outcome.metrics.to_text();
  return v;
}

Verdict ablation_directions(std::int64_t steps, std::int64_t seeds) {
  RunConfig base;
  base.train.steps = steps;
  // The default configuration is the first variant on every axis; train it once per seed.
  std::map<std::pair<std::string, std::int64_t>, double> cache;
  auto dsc = [&](const RunConfig& cfg, std::int64_t s) {
    auto run = cfg;
    run.train.seed = base.train.seed + static_cast<std::uint64_t>(s);
    const auto key = std::make_pair(write_config(run), s);
    if (!cache.count(key)) cache[key] = train_from_config(run).metrics.dsc_mean;
    return cache[key];
  };
  Verdict v;
  const std::vector<std::tuple<std::string, std::string, std::string>> pairs = {
      {"embedding", "deformable", "rigid"}, {"attention", "nmsa+dmsa", "wmsa+wmsa"}, {"posenc", "msdepe", "none"}};
  for (const auto& [axis, ours, theirs] : pairs) {
    double a = 0.0, b = 0.0;
    for (std::int64_t s = 0; s < seeds; ++s) {
      a += dsc(with_variant(base, axis, ours), s);
      b += dsc(with_variant(base, axis, theirs), s);
    }
    a /= static_cast<double>(seeds);
    b /= static_cast<double>(seeds);
    const bool ok = a >= b;
    v.pass = v.pass && ok;
    char buf[200];
    std::snprintf(buf, sizeof buf, "  %-10s %s=%.4f %s=%.4f margin=%+.4f %s\n", axis.c_str(), ours.c_str(), a,
                  theirs.c_str(), b, a - b, ok ? "ok" : "FAIL");
    v.detail += buf;
  }
  v.detail += "  steps=" + std::to_string(steps) + " seeds=" + std::to_string(seeds) + "\n";
  return v;
}

Verdict scaling(int runs) {
  const auto rows = run_bench("attention", parse_grid_sizes("1024,2048,4096"), 0, runs);
  std::map<std::string, std::vector<double>> t;
  for (const auto& r : rows) t[r.variant].push_back(r.micros);
  Verdict v;
  for (std::size_t i = 0; i + 1 < t["nmsa"].size(); ++i) {
    const double rn = t["nmsa"][i + 1] / t["nmsa"][i], rf = t["full"][i + 1] / t["full"][i];
    const bool ok = rn < 3.0 && rf > rn;
    v.pass = v.pass && ok;
    char buf[200];
    std::snprintf(buf, sizeof buf, "  L %d->%d nmsa x%.2f full x%.2f %s\n", 1024 << i, 2048 << i, rn, rf,
                  ok ? "ok" : "FAIL");
    v.detail += buf;
  }
  v.detail += bench_csv(rows);
  return v;
}

Verdict parameter_counts() {
  const auto tiny = Network::build(NetworkConfig::tiny(), 0).param_count();
  const auto base = Network::build(NetworkConfig::base(), 0).param_count();
  const double rel = (static_cast<double>(tiny) - 28.85e6) / 28.85e6;
  const double ratio = static_cast<double>(base) / static_cast<double>(tiny);
  Verdict v;
  v.pass = std::abs(rel) <= 0.20 && ratio >= 3.5 && ratio <= 4.8;
  char buf[200];
  std::snprintf(buf, sizeof buf, "  tiny=%lld (%+.1f%% vs 28.85M) base=%lld base/tiny=%.3f\n",
                static_cast<long long>(tiny), 100 * rel, static_cast<long long>(base), ratio);
  v.detail = buf;
  return v;
}

Verdict determinism() {
  RunConfig cfg;
  cfg.data.image_size = 32;
  cfg.data.train_count = 8;
  cfg.data.test_count = 4;
  cfg.train.steps = 20;
  const auto a = train_from_config(cfg), b = train_from_config(cfg);
  bool logs = a.log.size() == b.log.size();
  for (std::size_t i = 0; logs && i < a.log.size(); ++i) {
    const auto &x = a.log[i], &y = b.log[i];
    logs = x.step == y.step && std::memcmp(&x.lr, &y.lr, sizeof(double)) == 0 &&
           std::memcmp(&x.loss, &y.loss, sizeof(double)) == 0 && std::memcmp(&x.dsc, &y.dsc, sizeof(double)) == 0;
  }

  NamedTensors named;
  const auto& ps = a.net.params();
  for (ParamId id = 0; id < ps.size(); ++id) named.emplace_back(ps.name(id), ps[id]);
  const auto bytes = encode_checkpoint(named);
  const auto back = decode_checkpoint(bytes);
  bool round = back.size() == named.size() && encode_checkpoint(back) == bytes;
  for (std::size_t i = 0; round && i < back.size(); ++i) {
    const auto& x = named[i].second.data();
    const auto& y = back[i].second.data();
    round = back[i].first == named[i].first && back[i].second.shape() == named[i].second.shape() &&
            std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0;
  }
  auto fresh = Network::build(cfg.model, 99);
  load_into(fresh.params(), back);
  SplitMix64 rng(3);
  const auto img = rand_tensor(rng, {1, 32, 32}, 0, 1);
  const auto ya = a.net.forward(img).logits, yb = fresh.forward(img).logits;
  const bool forward = std::memcmp(ya.data().data(), yb.data().data(), sizeof(double) * ya.data().size()) == 0;

  Verdict v;
  v.pass = logs && round && forward;
  v.detail = std::string("  train logs bit-identical: ") + (logs ? "yes" : "no") + "\n  AGFK round-trip bit-exact: " +
             (round ? "yes" : "no") + "\n  restored forward bit-exact: " + (forward ? "yes" : "no") + "\n";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads();
  CLI::App app{"Acceptance criteria"};
  std::vector<int> which;
  int trials = 5, bench_runs = 5;
  std::int64_t ablation_steps = 400, ablation_seeds = 3;
  app.add_option("--criterion", which, "criterion number 1-8 (repeatable)")->check(CLI::Range(1, 8));
  app.add_option("--trials", trials, "gradient-check trials per op")->check(CLI::PositiveNumber);
  app.add_option("--ablation-steps", ablation_steps, "training steps per ablation run")->check(CLI::PositiveNumber);
  app.add_option("--ablation-seeds", ablation_seeds, "seeds per ablation variant")->check(CLI::PositiveNumber);
  app.add_option("--bench-runs", bench_runs, "timed runs per benchmark point")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria = {
      {1, {"gradient suite", [&] { return gradient_suite(trials); }}},
      {2, {"degeneracy oracles", degeneracy_suite}},
      {3, {"brute-force oracles", brute_force_suite}},
      {4, {"synthetic training DSC", synthetic_training}},
      {5, {"ablation directions", [&] { return ablation_directions(ablation_steps, ablation_seeds); }}},
      {6, {"attention scaling", [&] { return scaling(bench_runs); }}},
      {7, {"parameter counts", parameter_counts}},
      {8, {"determinism and checkpoint I/O", determinism}},
  };
  bool all = true;
  for (int n : std::set<int>(which.begin(), which.end())) {
    const auto& [name, fn] = criteria.at(n);
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("  error: ") + e.what() + "\n"};
    }
    std::fputs(v.detail.c_str(), stdout);
    std::printf("criterion %d (%s): %s\n", n, name.c_str(), v.pass ? "PASS" : "FAIL");
    std::fflush(stdout);
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
