#include "agile/sampling.hpp"

#include "agile/error.hpp"
#include "agile/kernels.hpp"

namespace agile {

Tensor grid_sample(const Tensor& f, const Tensor& positions) {
  const int spatial = f.rank() - 1;
  if (spatial != 2 && spatial != 3) {
    throw DimensionError("grid_sample: feature map must be [C,H,W] or [C,D,H,W], got " + shape_str(f.shape()));
  }
  if (positions.rank() < 2 || positions.dim(-1) != spatial) {
    throw DimensionError("grid_sample: positions " + shape_str(positions.shape()) + " do not match spatial rank " +
                         std::to_string(spatial) + " of " + shape_str(f.shape()));
  }
  const std::int64_t count = positions.dim(-2);
  const std::int64_t batch = positions.numel() / (count * spatial);
  const std::int64_t channels = f.dim(0);
  Shape out_shape(positions.shape().begin(), positions.shape().end() - 2);
  out_shape.push_back(channels);
  out_shape.push_back(count);
  std::vector<double> out(static_cast<std::size_t>(batch * channels * count));
  if (spatial == 2) {
    kernels::grid_sample2d_forward(channels, f.dim(1), f.dim(2), f.ptr(), batch, count, positions.ptr(), out.data());
  } else {
    kernels::grid_sample3d_forward(channels, f.dim(1), f.dim(2), f.dim(3), f.ptr(), batch, count, positions.ptr(),
                                   out.data());
  }
  return detail::record(
      Tensor(out_shape, std::move(out)), {f, positions},
      [f, positions, spatial, batch, count, channels](std::span<const double> g, GradSlots gi) {
        double* gf = gi[0] ? gi[0]->data() : nullptr;
        double* gp = gi[1] ? gi[1]->data() : nullptr;
        if (spatial == 2) {
          kernels::grid_sample2d_backward(channels, f.dim(1), f.dim(2), f.ptr(), batch, count, positions.ptr(),
                                          g.data(), gf, gp);
        } else {
          kernels::grid_sample3d_backward(channels, f.dim(1), f.dim(2), f.dim(3), f.ptr(), batch, count,
                                          positions.ptr(), g.data(), gf, gp);
        }
      });
}

Tensor lattice_positions(std::int64_t height, std::int64_t width) {
  std::vector<double> p(static_cast<std::size_t>(height * width * 2));
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      p[static_cast<std::size_t>(2 * (y * width + x))] = static_cast<double>(y);
      p[static_cast<std::size_t>(2 * (y * width + x) + 1)] = static_cast<double>(x);
    }
  }
  return Tensor({height * width, 2}, std::move(p));
}

}  // namespace agile
