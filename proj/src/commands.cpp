#include "agile/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "agile/checkpoint.hpp"
#include "agile/error.hpp"

namespace agile {

DataSplits make_splits(const RunConfig& cfg) {
  const auto n = cfg.data.image_size;
  const auto c = cfg.model.num_classes;
  return {synthetic_split(cfg.data.seed, "train", cfg.data.train_count, c, n, n),
          synthetic_split(cfg.data.seed, "test", cfg.data.test_count, c, n, n)};
}

TrainOutcome train_from_config(const RunConfig& cfg, const std::function<void(const LogRow&)>& on_row) {
  cfg.validate();
  const auto data = make_splits(cfg);
  auto net = Network::build(cfg.model, cfg.train.seed);
  auto log = train(net, data.train, cfg.train, on_row);
  auto metrics = evaluate(net, data.test);
  return {std::move(net), std::move(log), std::move(metrics)};
}

std::string log_csv(const std::vector<LogRow>& log) {
  std::string out = log_csv_header() + "\n";
  for (const auto& r : log) out += log_csv_row(r) + "\n";
  return out;
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace

void write_train_artifacts(const std::string& dir, const RunConfig& cfg, const TrainOutcome& outcome) {
  const std::filesystem::path d(dir);
  std::filesystem::create_directories(d);
  save_checkpoint((d / "checkpoint.agfk").string(), outcome.net.params());
  write_file(d / "log.csv", log_csv(outcome.log));
  write_file(d / "metrics.txt", outcome.metrics.to_text());
  write_file(d / "config.txt", write_config(cfg));
}

EvalOutcome eval_checkpoint(const RunConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  auto net = Network::build(cfg.model, cfg.train.seed);
  load_into(net.params(), read_checkpoint(checkpoint_path));
  const auto test = make_splits(cfg).test;
  EvalOutcome out;
  out.predictions = predict_all(net, test);
  for (const auto& s : test) out.labels.push_back(s.label);
  out.metrics = summarize(out.predictions, out.labels, cfg.model.num_classes);
  return out;
}

std::string masks_to_text(const std::vector<LabelMask>& masks) {
  std::ostringstream o;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    if (i) o << "\n";
    o << m.height << " " << m.width << "\n";
    for (std::int64_t y = 0; y < m.height; ++y) {
      for (std::int64_t x = 0; x < m.width; ++x) o << (x ? " " : "") << m.at(y, x);
      o << "\n";
    }
  }
  return o.str();
}

std::vector<LabelMask> masks_from_text(const std::string& text) {
  std::istringstream in(text);
  std::vector<LabelMask> out;
  LabelMask m;
  while (in >> m.height >> m.width) {
    m.values.resize(static_cast<std::size_t>(m.height * m.width));
    for (auto& v : m.values) {
      if (!(in >> v)) throw std::runtime_error("truncated mask text");
    }
    out.push_back(m);
  }
  return out;
}

double AblationRow::mean() const {
  double s = 0.0;
  for (double v : dsc) s += v;
  return dsc.empty() ? 0.0 : s / static_cast<double>(dsc.size());
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::string& axis,
                                      const std::function<void(const std::string&)>& progress) {
  const auto& variants = ablation_variants(cfg, axis);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row{axis, v, {}};
    for (std::int64_t s = 0; s < cfg.ablation.seeds; ++s) {
      auto run = with_variant(cfg, axis, v);
      run.train.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
      row.dsc.push_back(train_from_config(run).metrics.dsc_mean);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s=%s seed=%llu dsc_mean=%.6f", axis.c_str(), v.c_str(),
                      static_cast<unsigned long long>(run.train.seed), row.dsc.back());
        progress(buf);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,seeds,dsc_mean\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g\n", r.variant.c_str(), r.dsc.size(), r.mean());
    out += buf;
  }
  return out;
}

}  // namespace agile
