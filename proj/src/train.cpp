#include "agile/train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "agile/error.hpp"
#include "agile/ops.hpp"

namespace agile {

using i64 = std::int64_t;

void AdamW::step(ParameterStore& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size()) throw ContractError("AdamW: one gradient per parameter expected");
  if (m_.empty()) {
    for (ParamId id = 0; id < params.size(); ++id) {
      m_.emplace_back(static_cast<std::size_t>(params[id].numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(params[id].numel()), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (ParamId id = 0; id < params.size(); ++id) {
    const auto& p = params[id];
    const auto g = grads[id].data();
    auto& m = m_[id];
    auto& v = v_[id];
    const double decay = p.rank() >= 2 ? weight_decay : 0.0;
    std::vector<double> next(p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      next[i] -= lr * (mh / (std::sqrt(vh) + eps) + decay * next[i]);
    }
    params.set(id, Tensor(p.shape(), std::move(next)));
  }
}

double cosine_lr(double lr, i64 step, i64 total_steps) {
  if (total_steps <= 1) return lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr: must be positive");
  if (steps < 1) throw ConfigError("steps: must be >= 1");
  if (batch < 1) throw ConfigError("batch: must be >= 1");
  if (log_every < 1) throw ConfigError("log_every: must be >= 1");
  loss.validate();
}

std::string log_csv_header() { return "step,lr,loss,dsc"; }

std::string log_csv_row(const LogRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g", static_cast<long long>(r.step), r.lr, r.loss, r.dsc);
  return buf;
}

LossAndGrads loss_and_grads(const Network& net, const std::vector<const SegmentationSample*>& batch,
                            const LossConfig& loss) {
  LossAndGrads out;
  Tape tape;
  std::optional<Tensor> total;
  for (const auto* s : batch) {
    const auto o = net.forward(s->image);
    out.predictions.push_back(argmax_mask(o.logits.detach()));
    auto l = combined_loss(o.logits, o.aux_logits, s->label, loss);
    total = total ? add(*total, l) : l;
  }
  const auto mean_loss = scale(*total, 1.0 / static_cast<double>(batch.size()));
  out.loss = mean_loss.item();
  const auto grads = tape.backward(mean_loss);
  const auto& params = net.params();
  out.grads.reserve(params.size());
  for (ParamId id = 0; id < params.size(); ++id) out.grads.push_back(grads.of(params[id]));
  return out;
}

std::vector<LogRow> train(Network& net, const std::vector<SegmentationSample>& data, const TrainConfig& cfg,
                          const std::function<void(const LogRow&)>& on_row) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train_count: training set is empty");
  const i64 classes = net.config().num_classes;
  auto picker = SplitMix64(cfg.seed).split("batches");
  AdamW opt;
  std::vector<LogRow> log;
  for (i64 step = 0; step < cfg.steps; ++step) {
    std::vector<const SegmentationSample*> batch;
    for (i64 b = 0; b < cfg.batch; ++b) batch.push_back(&data[picker.below(data.size())]);
    const double lr = cosine_lr(cfg.lr, step, cfg.steps);
    auto r = loss_and_grads(net, batch, cfg.loss);
    if (!std::isfinite(r.loss)) {
      throw TrainingError("non-finite loss " + std::to_string(r.loss) + " at step " + std::to_string(step));
    }
    opt.step(net.params(), r.grads, lr);
    if (step % cfg.log_every == 0 || step == cfg.steps - 1) {
      double dsc = 0.0;
      for (std::size_t i = 0; i < batch.size(); ++i) dsc += mean_foreground_dsc(r.predictions[i], batch[i]->label, classes);
      LogRow row{step, lr, r.loss, dsc / static_cast<double>(batch.size())};
      log.push_back(row);
      if (on_row) on_row(row);
    }
  }
  return log;
}

LabelMask predict(const Network& net, const Tensor& image) {
  NoGradGuard guard;
  return argmax_mask(net.forward(image).logits);
}

std::vector<LabelMask> predict_all(const Network& net, const std::vector<SegmentationSample>& data) {
  std::vector<LabelMask> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(predict(net, s.image));
  return out;
}

MetricsSummary evaluate(const Network& net, const std::vector<SegmentationSample>& data) {
  std::vector<LabelMask> labels;
  for (const auto& s : data) labels.push_back(s.label);
  return summarize(predict_all(net, data), labels, net.config().num_classes);
}

}  // namespace agile
