#pragma once

// Bilinear / trilinear corner arithmetic shared by the kernels.

#include <cmath>
#include <cstdint>

namespace agile::kernels::detail {

using i64 = std::int64_t;

// Positions this far out are treated as fully outside any map.
inline constexpr double kFarOutside = 1e9;

struct Corners2 {
  i64 y0;
  i64 x0;
  double ly;
  double lx;
  bool valid;
};

inline Corners2 corners2(double y, double x) {
  if (!(std::fabs(y) < kFarOutside) || !(std::fabs(x) < kFarOutside)) return {0, 0, 0.0, 0.0, false};
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  return {static_cast<i64>(fy), static_cast<i64>(fx), y - fy, x - fx, true};
}

inline double at2(const double* plane, i64 h, i64 w, i64 y, i64 x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : 0.0;
}

inline double bilinear(const double* plane, i64 h, i64 w, double y, double x) {
  const auto c = corners2(y, x);
  if (!c.valid) return 0.0;
  const double v00 = at2(plane, h, w, c.y0, c.x0);
  const double v01 = at2(plane, h, w, c.y0, c.x0 + 1);
  const double v10 = at2(plane, h, w, c.y0 + 1, c.x0);
  const double v11 = at2(plane, h, w, c.y0 + 1, c.x0 + 1);
  return (1.0 - c.ly) * (1.0 - c.lx) * v00 + (1.0 - c.ly) * c.lx * v01 + c.ly * (1.0 - c.lx) * v10 +
         c.ly * c.lx * v11;
}

// d(bilinear)/d(y, x); right-continuous at integer coordinates.
inline void bilinear_position_grad(const double* plane, i64 h, i64 w, double y, double x, double& dy,
                                   double& dx) {
  const auto c = corners2(y, x);
  if (!c.valid) {
    dy = dx = 0.0;
    return;
  }
  const double v00 = at2(plane, h, w, c.y0, c.x0);
  const double v01 = at2(plane, h, w, c.y0, c.x0 + 1);
  const double v10 = at2(plane, h, w, c.y0 + 1, c.x0);
  const double v11 = at2(plane, h, w, c.y0 + 1, c.x0 + 1);
  dy = (1.0 - c.lx) * (v10 - v00) + c.lx * (v11 - v01);
  dx = (1.0 - c.ly) * (v01 - v00) + c.ly * (v11 - v10);
}

inline void add2(double* plane, i64 h, i64 w, i64 y, i64 x, double v) {
  if (y >= 0 && y < h && x >= 0 && x < w) plane[y * w + x] += v;
}

inline void bilinear_scatter(double* plane, i64 h, i64 w, double y, double x, double g) {
  const auto c = corners2(y, x);
  if (!c.valid) return;
  add2(plane, h, w, c.y0, c.x0, (1.0 - c.ly) * (1.0 - c.lx) * g);
  add2(plane, h, w, c.y0, c.x0 + 1, (1.0 - c.ly) * c.lx * g);
  add2(plane, h, w, c.y0 + 1, c.x0, c.ly * (1.0 - c.lx) * g);
  add2(plane, h, w, c.y0 + 1, c.x0 + 1, c.ly * c.lx * g);
}

struct Corners3 {
  i64 z0;
  i64 y0;
  i64 x0;
  double lz;
  double ly;
  double lx;
  bool valid;
};

inline Corners3 corners3(double z, double y, double x) {
  if (!(std::fabs(z) < kFarOutside) || !(std::fabs(y) < kFarOutside) || !(std::fabs(x) < kFarOutside)) {
    return {0, 0, 0, 0.0, 0.0, 0.0, false};
  }
  const double fz = std::floor(z);
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  return {static_cast<i64>(fz), static_cast<i64>(fy), static_cast<i64>(fx), z - fz, y - fy, x - fx, true};
}

inline bool inside3(i64 d, i64 h, i64 w, i64 z, i64 y, i64 x) {
  return z >= 0 && z < d && y >= 0 && y < h && x >= 0 && x < w;
}

}  // namespace agile::kernels::detail
