#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "agile/commands.hpp"
#include "agile/config.hpp"
#include "agile/error.hpp"
#include "agile/parallel.hpp"
#include "support.hpp"

using namespace agile;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("agile_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

struct Run {
  int code = -1;
  std::string out, err;
};

Run agile_cli(const std::string& args, const std::string& env = "") {
  const auto o = scratch() / "stdout.txt", e = scratch() / "stderr.txt";
  const std::string cmd = env + " '" + std::string(AGILE_CLI) + "' " + args + " >'" + o.string() + "' 2>'" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

const char* kSmall = R"([model]
variant = nano
[data]
image_size = 32
train_count = 4
test_count = 3
seed = 1
[train]
steps = 6
seed = 2
[ablation]
seeds = 1
)";

std::string small_config() {
  const auto p = scratch() / "small.cfg";
  if (!fs::exists(p)) put(p, kSmall);
  return p.string();
}

// Trains the small config once into dir `name`.
fs::path trained(const std::string& name, const std::string& env = "") {
  const auto dir = scratch() / name;
  if (!fs::exists(dir / "metrics.txt")) {
    const auto r = agile_cli("train --config '" + small_config() + "' --out '" + dir.string() + "'", env);
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  return dir;
}

double metric(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "=", 0) == 0) return std::stod(line.substr(key.size() + 1));
  }
  FAIL("missing metric " << key);
  return 0.0;
}

}  // namespace

TEST_CASE("gradcheck subcommand") {
  const auto ok = agile_cli("gradcheck --op dmsa --trials 5");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);

  const auto bad = agile_cli("gradcheck --op nosuch");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("dmsa") != std::string::npos);
  CHECK(agile_cli("gradcheck --op dmsa --trials 0").code == 2);
  CHECK(agile_cli("frobnicate").code == 2);
}

TEST_CASE("train writes artifacts and is reproducible") {
  const auto a = trained("run_a");
  for (const char* f : {"checkpoint.agfk", "log.csv", "metrics.txt", "config.txt"}) CHECK(fs::exists(a / f));
  const auto log = slurp(a / "log.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 7);  // header + 6 steps

  const auto b = trained("run_b");
  CHECK(slurp(a / "log.csv") == slurp(b / "log.csv"));
  CHECK(slurp(a / "metrics.txt") == slurp(b / "metrics.txt"));
  CHECK(slurp(a / "checkpoint.agfk") == slurp(b / "checkpoint.agfk"));
  CHECK(parse_config(slurp(a / "config.txt")) == load_config(small_config()));
}

TEST_CASE("AGILE_THREADS does not change results") {
  const auto a = trained("run_a");
  const auto t3 = trained("run_t3", "AGILE_THREADS=3");
  CHECK(slurp(a / "log.csv") == slurp(t3 / "log.csv"));
  CHECK(slurp(a / "checkpoint.agfk") == slurp(t3 / "checkpoint.agfk"));

  const int saved = max_threads();
  ::setenv("AGILE_THREADS", "2", 1);
  CHECK(configure_threads() == 2);
  ::setenv("AGILE_THREADS", "zero", 1);
  CHECK(configure_threads() == 2);
  ::unsetenv("AGILE_THREADS");
  set_threads(saved);
}

TEST_CASE("eval reproduces metrics.txt and dumps predictions") {
  const auto a = trained("run_a");
  const auto dump = scratch() / "pred.txt";
  const auto r = agile_cli("eval --checkpoint '" + (a / "checkpoint.agfk").string() + "' --config '" + small_config() +
                           "' --dump-predictions '" + dump.string() + "'");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out == slurp(a / "metrics.txt"));

  // Independent per-image DSC from the dumped masks.
  const auto cfg = load_config(small_config());
  const auto preds = masks_from_text(slurp(dump));
  const auto test = make_splits(cfg).test;
  REQUIRE(preds.size() == test.size());
  double mean = 0.0;
  for (std::int32_t c = 1; c < cfg.model.num_classes; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      double p = 0, g = 0, both = 0;
      for (std::size_t j = 0; j < preds[i].values.size(); ++j) {
        const bool a1 = preds[i].values[j] == c, b1 = test[i].label.values[j] == c;
        p += a1;
        g += b1;
        both += a1 && b1;
      }
      acc += p + g == 0 ? 1.0 : 2 * both / (p + g);
    }
    acc /= static_cast<double>(preds.size());
    CHECK(std::abs(acc - metric(r.out, "dsc_" + std::to_string(c))) < 1e-12);
    mean += acc;
  }
  mean /= static_cast<double>(cfg.model.num_classes - 1);
  CHECK(std::abs(mean - metric(r.out, "dsc_mean")) < 1e-12);
}

TEST_CASE("eval rejects a truncated checkpoint") {
  const auto a = trained("run_a");
  const auto bytes = slurp(a / "checkpoint.agfk");
  const auto cut = scratch() / "cut.agfk";
  put(cut, bytes.substr(0, bytes.size() - 100));
  const auto r = agile_cli("eval --checkpoint '" + cut.string() + "' --config '" + small_config() + "'");
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);
  CHECK(agile_cli("eval --checkpoint '" + (scratch() / "missing.agfk").string() + "' --config '" + small_config() +
                  "'").code == 1);
}

TEST_CASE("ablate") {
  const auto a = trained("run_a");
  const auto r = agile_cli("ablate --config '" + small_config() + "' --axis attention");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream in(r.out);
  std::string header, row;
  std::getline(in, header);
  CHECK(header == "variant,seeds,dsc_mean");
  std::vector<std::string> rows;
  while (std::getline(in, row)) rows.push_back(row);
  REQUIRE(rows.size() >= 2);
  // The default attention pattern is the first variant; its row is the standalone run.
  REQUIRE(rows[0].rfind("nmsa+dmsa,1,", 0) == 0);
  CHECK(std::stod(rows[0].substr(12)) == metric(slurp(a / "metrics.txt"), "dsc_mean"));
  CHECK(agile_cli("ablate --config '" + small_config() + "' --axis depth").code == 2);
}

TEST_CASE("bench emits one row per variant and size") {
  const auto r = agile_cli("bench --op attention --sizes 16,64 --runs 1");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1 + 3 * 2);
  const auto g = agile_cli("bench --op grid_sample --sizes 8x8 --runs 1");
  CHECK(std::count(g.out.begin(), g.out.end(), '\n') == 1 + 2);
  CHECK(agile_cli("bench --op nosuch").code == 2);
  CHECK(agile_cli("bench --op attention --runs 0").code == 2);
}

TEST_CASE("config errors exit 2 naming the line and key") {
  const auto p = scratch() / "bad.cfg";
  put(p, "[model]\nvariant = nano\n[train]\n\nsteps = many\n");
  const auto r = agile_cli("train --config '" + p.string() + "' --out '" + (scratch() / "bad").string() + "'");
  CHECK(r.code == 2);
  CHECK(r.err.find("line 5") != std::string::npos);
  CHECK(r.err.find("steps") != std::string::npos);

  put(p, "[model]\nnonsense = 1\n");
  const auto u = agile_cli("train --config '" + p.string() + "' --out '" + (scratch() / "bad").string() + "'");
  CHECK(u.code == 2);
  CHECK(u.err.find("nonsense") != std::string::npos);
  CHECK(agile_cli("train --config '" + (scratch() / "none.cfg").string() + "' --out x").code == 2);
}

TEST_CASE("config round-trip and errors") {
  RunConfig cfg = parse_config(kSmall);
  CHECK(cfg.data.image_size == 32);
  CHECK(cfg.train.steps == 6);
  CHECK(parse_config(write_config(cfg)) == cfg);
  RunConfig def;
  CHECK(parse_config(write_config(def)) == def);
  cfg.model.even_attention = AttentionKind::kWmsa;
  cfg.train.lr = 1.0 / 3.0;
  CHECK(parse_config(write_config(cfg)) == cfg);
  CHECK_THROWS_AS(parse_config("[data]\nimage_size = 30\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nope]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("steps 5\n"), ConfigError);
  CHECK(with_variant(def, "attention", "wmsa+wmsa").model.odd_attention == AttentionKind::kWmsa);
  CHECK_THROWS_AS(with_variant(def, "depth", "x"), ConfigError);
}
