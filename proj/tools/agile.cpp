// agile: gradient checks, training, evaluation, ablations and benchmarks.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "agile/bench.hpp"
#include "agile/commands.hpp"
#include "agile/config.hpp"
#include "agile/error.hpp"
#include "agile/gradcheck.hpp"
#include "agile/parallel.hpp"

namespace {

using namespace agile;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string op_list() {
  std::string s;
  for (const auto& op : gradcheck_registry()) s += "  " + op.module + "/" + op.name + "\n";
  return s;
}

int cmd_gradcheck(const std::string& module, const std::string& op, std::uint64_t seed, int trials) {
  if (trials < 1) throw UsageError("--trials must be >= 1");
  std::vector<const GradcheckOp*> ops;
  for (const auto& o : gradcheck_registry()) {
    if ((op.empty() || o.name == op) && (module.empty() || o.module == module)) ops.push_back(&o);
  }
  if (ops.empty()) throw UsageError("no gradcheck op matches module='" + module + "' op='" + op + "'; known ops:\n" + op_list());
  bool all = true;
  for (const auto* o : ops) {
    std::map<std::string, std::pair<double, double>> worst;  // rel, abs
    std::vector<std::string> order;
    double op_worst = 0.0;
    double tol = 0.0;
    for (int t = 0; t < trials; ++t) {
      const auto c = o->make(seed + static_cast<std::uint64_t>(t));
      tol = c.tolerance;
      const auto r = run_gradcheck(c, seed + static_cast<std::uint64_t>(t));
      for (const auto& g : r.groups) {
        if (!worst.count(g.group)) order.push_back(g.group);
        auto& w = worst[g.group];
        w = {std::max(w.first, g.worst), std::max(w.second, g.max_abs)};
      }
      op_worst = std::max(op_worst, r.worst);
    }
    const bool pass = op_worst < tol;
    all = all && pass;
    std::printf("%s/%s trials=%d worst_rel_err=%.3e tol=%.0e %s\n", o->module.c_str(), o->name.c_str(), trials,
                op_worst, tol, pass ? "PASS" : "FAIL");
    for (const auto& g : order) {
      std::printf("  %s worst_rel_err=%.3e max_abs_err=%.3e\n", g.c_str(), worst[g].first, worst[g].second);
    }
  }
  return all ? kOk : kFailure;
}

int cmd_train(const std::string& config, const std::string& out) {
  const auto cfg = load_config(config);
  const auto every = std::max<std::int64_t>(1, cfg.train.steps / 20);
  auto outcome = train_from_config(cfg, [&](const LogRow& r) {
    if (r.step % every == 0 || r.step == cfg.train.steps - 1) {
      std::fprintf(stderr, "step %lld lr %.3e loss %.5f dsc %.4f\n", static_cast<long long>(r.step), r.lr, r.loss,
                   r.dsc);
    }
  });
  write_train_artifacts(out, cfg, outcome);
  std::fputs(outcome.metrics.to_text().c_str(), stdout);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::string& dump) {
  const auto cfg = load_config(config);
  const auto r = eval_checkpoint(cfg, checkpoint);
  if (!dump.empty()) {
    std::ofstream f(dump);
    f << masks_to_text(r.predictions);
    if (!f) throw std::runtime_error("cannot write " + dump);
  }
  std::fputs(r.metrics.to_text().c_str(), stdout);
  return kOk;
}

int cmd_ablate(const std::string& config, const std::string& axis, const std::string& out) {
  if (axis != "attention" && axis != "posenc" && axis != "embedding") {
    throw UsageError("unknown axis '" + axis + "' (expected attention, posenc or embedding)");
  }
  const auto cfg = load_config(config);
  const auto rows = run_ablation(cfg, axis, [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
  const auto csv = ablation_csv(rows);
  if (!out.empty()) {
    std::ofstream f(out);
    f << csv;
    if (!f) throw std::runtime_error("cannot write " + out);
  }
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

int cmd_bench(const std::string& op, const std::string& sizes, std::uint64_t seed, int runs, const std::string& out) {
  if (runs < 1) throw UsageError("--runs must be >= 1");
  const auto& ops = bench_ops();
  if (std::find(ops.begin(), ops.end(), op) == ops.end()) throw UsageError("unknown bench op '" + op + "'");
  const auto csv = bench_csv(run_bench(op, parse_grid_sizes(sizes), seed, runs));
  if (!out.empty()) {
    std::ofstream f(out);
    f << csv;
    if (!f) throw std::runtime_error("cannot write " + out);
  }
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  agile::configure_threads();
  CLI::App app{"Deformable attention segmentation toolkit"};
  app.require_subcommand(1);

  std::string module, op, config, out, checkpoint, dump, axis, sizes = "1024,2048,4096";
  std::uint64_t seed = 0;
  int trials = 5, runs = 5;

  auto* gc = app.add_subcommand("gradcheck", "central-difference gradient checks");
  gc->add_option("--module", module, "restrict to one module");
  gc->add_option("--op", op, "op name");
  gc->add_option("--seed", seed, "base seed");
  gc->add_option("--trials", trials, "random trials per op");

  auto* tr = app.add_subcommand("train", "train on the synthetic task");
  tr->add_option("--config", config, "config file")->required();
  tr->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", checkpoint, "AGFK checkpoint")->required();
  ev->add_option("--config", config, "config file")->required();
  ev->add_option("--dump-predictions", dump, "write predicted masks as text");

  auto* ab = app.add_subcommand("ablate", "train variants along one axis");
  ab->add_option("--config", config, "config file")->required();
  ab->add_option("--axis", axis, "attention, posenc or embedding")->required();
  ab->add_option("--out", out, "write the CSV here too");

  auto* be = app.add_subcommand("bench", "median-of-runs timings");
  be->add_option("--op", op, "attention, deform_conv or grid_sample")->required();
  be->add_option("--sizes", sizes, "comma-separated L or HxW");
  be->add_option("--seed", seed, "input seed");
  be->add_option("--runs", runs, "timed runs per point");
  be->add_option("--out", out, "write the CSV here too");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(module, op, seed, trials);
    if (tr->parsed()) return cmd_train(config, out);
    if (ev->parsed()) return cmd_eval(checkpoint, config, dump);
    if (ab->parsed()) return cmd_ablate(config, axis, out);
    if (be->parsed()) return cmd_bench(op, sizes, seed, runs, out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const agile::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
