#pragma once

// Label masks, segmentation losses and metrics.

#include <optional>
#include <string>
#include <vector>

#include "agile/tensor.hpp"

namespace agile {

struct LabelMask {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int32_t> values;  // row-major, class ids

  std::int32_t at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
  std::int64_t size() const { return height * width; }
  bool operator==(const LabelMask&) const = default;
};

/// Every f-th pixel along each axis.
LabelMask nearest_downsample(const LabelMask& m, std::int64_t factor);

/// Per-pixel argmax over the class axis of logits [C, H, W]; ties go to the
/// lower class id.
LabelMask argmax_mask(const Tensor& logits);

/// One-hot [C, H*W] constant.
Tensor one_hot(const LabelMask& label, std::int64_t classes);

struct LossConfig {
  double lambda = 0.6;
  void validate() const;
};

inline constexpr double kDiceEpsilon = 1e-5;

/// 1 - mean over all classes of (2 sum(p g) + eps) / (sum p + sum g + eps),
/// with p = softmax over the class axis of logits [C, H, W].
Tensor dice_loss(const Tensor& logits, const LabelMask& label);

/// Mean per-pixel softmax cross-entropy (fused, max-subtracted).
Tensor cross_entropy(const Tensor& logits, const LabelMask& label);

/// lambda*dice + (1-lambda)*CE per head. The main head has weight 1 and aux
/// head i (decreasing resolution) weight 2^-(i+1); weights are normalized to
/// sum to 1. Aux targets are the label downsampled by nearest neighbor.
Tensor combined_loss(const Tensor& logits, const std::vector<Tensor>& aux_logits, const LabelMask& label,
                     const LossConfig& cfg);

// 2|P n G| / (|P| + |G|) for class c; 1 when both are empty.
double dsc_metric(const LabelMask& pred, const LabelMask& label, std::int32_t c);

/// 95th percentile (linear interpolation) of the pooled nearest-boundary
/// distances from each mask's boundary pixels to the other's, in pixels.
/// A boundary pixel belongs to the mask and has at least one of its 8
/// neighbors outside it (pixels beyond the image count as outside).
/// Throws UndefinedMetric if either mask lacks class c.
double hd95_metric(const LabelMask& pred, const LabelMask& label, std::int32_t c);

/// Boundary pixels of class c as (y, x) pairs.
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const LabelMask& m, std::int32_t c);

/// Linear-interpolation percentile of unsorted values, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// Per-class metrics over a set of (prediction, label) pairs. Class 0 is
/// background and excluded from the means. DSC per class is averaged over
/// samples; HD95 per class is averaged over the samples where it is defined
/// and is absent when it is defined for none.
struct MetricsSummary {
  std::int64_t num_classes = 0;
  std::vector<double> dsc;                   // index c-1 for class c
  std::vector<std::optional<double>> hd95;
  double dsc_mean = 0.0;
  std::optional<double> hd95_mean;

  /// `key=value` lines: dsc_<c>, dsc_mean, hd95_<c>, hd95_mean; absent
  /// values print as "nan".
  std::string to_text() const;
};

MetricsSummary summarize(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& labels,
                         std::int64_t num_classes);

// Mean DSC over foreground classes for one pair.
double mean_foreground_dsc(const LabelMask& pred, const LabelMask& label, std::int64_t num_classes);

}  // namespace agile
