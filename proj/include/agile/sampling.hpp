#pragma once

#include "agile/tensor.hpp"

namespace agile {

/// Samples a feature map at fractional positions.
///
/// f is [C, H, W] (bilinear) or [C, D, H, W] (trilinear). positions is
/// [..., L, R] with R the spatial rank of f, coordinates in pixel units
/// ordered (row, col) or (depth, row, col) with the origin at pixel 0. The
/// result is [..., C, L]. Corners outside the map contribute zero.
/// Differentiable with respect to both f and positions; at exact integer
/// coordinates the position gradient takes the right-hand cell.
Tensor grid_sample(const Tensor& f, const Tensor& positions);

/// Integer lattice positions [H*W, 2] in row-major order.
Tensor lattice_positions(std::int64_t height, std::int64_t width);

}  // namespace agile
