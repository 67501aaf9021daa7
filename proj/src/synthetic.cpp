#include "agile/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "agile/error.hpp"
#include "agile/rng.hpp"

namespace agile {

using i64 = std::int64_t;

namespace {

constexpr int kMaxRedraws = 32;
constexpr i64 kMinVisible = 20;

i64 paint_shape(SplitMix64& rng, LabelMask& m, std::int32_t c) {
  const double h = static_cast<double>(m.height), w = static_cast<double>(m.width);
  const double cy = rng.uniform(0.25, 0.75) * h, cx = rng.uniform(0.25, 0.75) * w;
  const double ay = rng.uniform(0.10, 0.25) * h, ax = rng.uniform(0.10, 0.25) * w;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const bool ellipse = rng.uniform() < 0.5;
  const double ct = std::cos(theta), st = std::sin(theta);
  i64 painted = 0;
  for (i64 y = 0; y < m.height; ++y) {
    for (i64 x = 0; x < m.width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
      const double u = (ct * dy + st * dx) / ay, v = (-st * dy + ct * dx) / ax;
      const bool in = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
      if (in) {
        m.values[static_cast<std::size_t>(y * m.width + x)] = c;
        ++painted;
      }
    }
  }
  return painted;
}

}  // namespace

SegmentationSample gen_synthetic(std::uint64_t seed, i64 num_classes, i64 height, i64 width) {
  if (num_classes < 2) throw ConfigError("num_classes: synthetic data needs >= 2 classes");
  if (height < 8 || width < 8) throw ConfigError("image_size: synthetic extents must be >= 8");
  SplitMix64 rng(seed);
  LabelMask label{height, width, {}};
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    label.values.assign(static_cast<std::size_t>(height * width), 0);
    std::vector<i64> painted(static_cast<std::size_t>(num_classes), 0);
    for (std::int32_t c = 1; c < num_classes; ++c) painted[static_cast<std::size_t>(c)] = paint_shape(rng, label, c);
    std::vector<i64> counts(static_cast<std::size_t>(num_classes), 0);
    for (auto v : label.values) ++counts[static_cast<std::size_t>(v)];
    bool ok = true;
    for (std::size_t c = 1; c < counts.size(); ++c) {
      ok = ok && counts[c] >= kMinVisible && 2 * counts[c] >= painted[c];
    }
    if (ok) break;
  }
  std::vector<double> img(label.values.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double base = 0.1 + 0.8 * static_cast<double>(label.values[i]) / static_cast<double>(num_classes - 1);
    img[i] = std::clamp(base + 0.1 * rng.normal(), 0.0, 1.0);
  }
  return {Tensor({1, height, width}, std::move(img)), std::move(label)};
}

std::vector<SegmentationSample> synthetic_split(std::uint64_t seed, const std::string& split, i64 count,
                                                i64 num_classes, i64 height, i64 width) {
  const auto root = SplitMix64(seed).split(split);
  std::vector<SegmentationSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (i64 i = 0; i < count; ++i) {
    out.push_back(gen_synthetic(root.split(static_cast<std::uint64_t>(i)).state(), num_classes, height, width));
  }
  return out;
}

}  // namespace agile
