#pragma once

// Batch entry points behind the command-line tool.

#include <string>
#include <vector>

#include "agile/config.hpp"
#include "agile/network.hpp"
#include "agile/segmentation.hpp"
#include "agile/train.hpp"

namespace agile {

struct TrainOutcome {
  Network net;
  std::vector<LogRow> log;
  MetricsSummary metrics;  // on the seeded test split
};

struct DataSplits {
  std::vector<SegmentationSample> train, test;
};
DataSplits make_splits(const RunConfig& cfg);

/// Builds the network from cfg.train.seed, trains on the seeded training
/// split and evaluates on the seeded test split.
TrainOutcome train_from_config(const RunConfig& cfg, const std::function<void(const LogRow&)>& on_row = {});

/// Writes checkpoint.agfk, log.csv, metrics.txt and config.txt into dir.
void write_train_artifacts(const std::string& dir, const RunConfig& cfg, const TrainOutcome& outcome);

std::string log_csv(const std::vector<LogRow>& log);

/// Restores the network from a checkpoint and scores the seeded test split.
struct EvalOutcome {
  MetricsSummary metrics;
  std::vector<LabelMask> predictions;
  std::vector<LabelMask> labels;
};
EvalOutcome eval_checkpoint(const RunConfig& cfg, const std::string& checkpoint_path);

/// Masks as text: "H W" then H rows of space-separated class ids, one blank
/// line between masks.
std::string masks_to_text(const std::vector<LabelMask>& masks);
std::vector<LabelMask> masks_from_text(const std::string& text);

struct AblationRow {
  std::string axis;
  std::string variant;
  std::vector<double> dsc;  // final test mean DSC per seed
  double mean() const;
};

/// Trains every variant of `axis` for cfg.ablation.seeds seeds (train seed
/// cfg.train.seed + s) and reports final test mean DSC.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::string& axis,
                                      const std::function<void(const std::string&)>& progress = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace agile
