#pragma once

#include <functional>
#include <string>
#include <vector>

#include "agile/network.hpp"
#include "agile/segmentation.hpp"
#include "agile/synthetic.hpp"

namespace agile {

/// Adam with decoupled weight decay. Decay applies to tensors of rank >= 2
/// (weights), not to biases and norm parameters.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  void step(ParameterStore& params, const std::vector<Tensor>& grads, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// lr * (1 + cos(pi t / (T-1))) / 2: lr at t = 0, zero at t = T-1.
double cosine_lr(double lr, std::int64_t step, std::int64_t total_steps);

struct TrainConfig {
  double lr = 2e-3;
  std::int64_t steps = 2000;
  std::int64_t batch = 2;
  LossConfig loss;
  std::uint64_t seed = 0;
  std::int64_t log_every = 1;

  void validate() const;
  bool operator==(const TrainConfig& o) const {
    return lr == o.lr && steps == o.steps && batch == o.batch && loss.lambda == o.loss.lambda && seed == o.seed &&
           log_every == o.log_every;
  }
};

struct LogRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double dsc = 0.0;  // mean foreground DSC of the batch predictions
};

std::string log_csv_header();
std::string log_csv_row(const LogRow& row);

/// Mini-batch training. Batches are drawn with replacement from a stream
/// seeded by cfg.seed. Throws TrainingError naming the step if the loss is
/// not finite.
std::vector<LogRow> train(Network& net, const std::vector<SegmentationSample>& data, const TrainConfig& cfg,
                          const std::function<void(const LogRow&)>& on_row = {});

/// Batch-mean combined loss with gradients of every parameter.
struct LossAndGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;
  std::vector<LabelMask> predictions;
};
LossAndGrads loss_and_grads(const Network& net, const std::vector<const SegmentationSample*>& batch,
                            const LossConfig& loss);

LabelMask predict(const Network& net, const Tensor& image);
std::vector<LabelMask> predict_all(const Network& net, const std::vector<SegmentationSample>& data);
MetricsSummary evaluate(const Network& net, const std::vector<SegmentationSample>& data);

}  // namespace agile
