#pragma once

#include <string>
#include <vector>

#include "agile/segmentation.hpp"
#include "agile/tensor.hpp"

namespace agile {

struct SegmentationSample {
  Tensor image;  // [1, H, W] in [0, 1]
  LabelMask label;
};

/// One synthetic sample: background 0 and, for each class 1..C-1, a random
/// ellipse or rectangle (center within the middle half, semi-axes 10-25% of
/// the extent, random rotation) painted in class order. A draw in which some
/// class keeps fewer than 20 visible pixels, or less than half of its shape,
/// is redrawn (bounded). Intensity 0.1 + 0.8 c/(C-1) plus N(0, 0.1) noise,
/// clipped to [0, 1].
SegmentationSample gen_synthetic(std::uint64_t seed, std::int64_t num_classes, std::int64_t height,
                                 std::int64_t width);

/// `count` samples whose seeds derive from (seed, split name, index).
std::vector<SegmentationSample> synthetic_split(std::uint64_t seed, const std::string& split, std::int64_t count,
                                                std::int64_t num_classes, std::int64_t height, std::int64_t width);

}  // namespace agile
