#include "agile/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sampling_math.hpp"

namespace agile::kernels {

using detail::bilinear;
using detail::bilinear_position_grad;
using detail::bilinear_scatter;

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr i64 kParallelWork = 1 << 14;

}  // namespace

void gemm(i64 m, i64 n, i64 k, const double* a, i64 a_rs, i64 a_cs, const double* b, i64 b_rs, i64 b_cs,
          double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  const bool par = m * n * k > kParallelWork && m > 1;
  if (b_cs == 1) {
#pragma omp parallel for schedule(static) if (par)
    for (i64 i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (i64 p = 0; p < k; ++p) {
        const double av = a[i * a_rs + p * a_cs];
        const double* brow = b + p * b_rs;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (par)
    for (i64 i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (i64 j = 0; j < n; ++j) {
        double s = 0.0;
        for (i64 p = 0; p < k; ++p) s += a[i * a_rs + p * a_cs] * b[p * b_rs + j * b_cs];
        crow[j] += s;
      }
    }
  }
}

// --- convolution via column buffers -----------------------------------------

namespace {

struct TapOffset {
  double dy;
  double dx;
};

inline TapOffset offset_at(const OffsetView& off, i64 tap, i64 p, i64 plane) {
  if (!off.data) return {0.0, 0.0};
  if (off.mode == OffsetMode::kShared) return {off.data[p], off.data[plane + p]};
  return {off.data[(2 * tap) * plane + p], off.data[(2 * tap + 1) * plane + p]};
}

}  // namespace

void im2col(const ConvGeometry& g, const double* input, OffsetView offsets, double* columns) {
  const i64 oh = g.out_h(), ow = g.out_w(), plane = oh * ow, taps = g.taps();
  const bool par = g.in_channels * taps * plane > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (i64 ci = 0; ci < g.in_channels; ++ci) {
    const double* src = input + ci * g.in_h * g.in_w;
    for (i64 t = 0; t < taps; ++t) {
      const i64 ki = t / g.kernel_w, kj = t % g.kernel_w;
      double* dst = columns + (ci * taps + t) * plane;
      for (i64 oy = 0; oy < oh; ++oy) {
        const i64 y = oy * g.stride - g.pad + ki * g.dilation;
        for (i64 ox = 0; ox < ow; ++ox) {
          const i64 x = ox * g.stride - g.pad + kj * g.dilation;
          const i64 p = oy * ow + ox;
          if (offsets.data) {
            const auto o = offset_at(offsets, t, p, plane);
            dst[p] = bilinear(src, g.in_h, g.in_w, static_cast<double>(y) + o.dy, static_cast<double>(x) + o.dx);
          } else {
            dst[p] = detail::at2(src, g.in_h, g.in_w, y, x);
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* columns, OffsetView offsets, double* input_grad) {
  const i64 oh = g.out_h(), ow = g.out_w(), plane = oh * ow, taps = g.taps();
  const bool par = g.in_channels * taps * plane > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (i64 ci = 0; ci < g.in_channels; ++ci) {
    double* dst = input_grad + ci * g.in_h * g.in_w;
    for (i64 t = 0; t < taps; ++t) {
      const i64 ki = t / g.kernel_w, kj = t % g.kernel_w;
      const double* src = columns + (ci * taps + t) * plane;
      for (i64 oy = 0; oy < oh; ++oy) {
        const i64 y = oy * g.stride - g.pad + ki * g.dilation;
        for (i64 ox = 0; ox < ow; ++ox) {
          const i64 x = ox * g.stride - g.pad + kj * g.dilation;
          const i64 p = oy * ow + ox;
          if (offsets.data) {
            const auto o = offset_at(offsets, t, p, plane);
            bilinear_scatter(dst, g.in_h, g.in_w, static_cast<double>(y) + o.dy, static_cast<double>(x) + o.dx,
                             src[p]);
          } else {
            detail::add2(dst, g.in_h, g.in_w, y, x, src[p]);
          }
        }
      }
    }
  }
}

void col2offset(const ConvGeometry& g, const double* columns_grad, const double* input, OffsetView offsets,
                double* offset_grad) {
  const i64 oh = g.out_h(), ow = g.out_w(), plane = oh * ow, taps = g.taps();
  const bool shared = offsets.mode == OffsetMode::kShared;
  const bool par = g.in_channels * taps * plane > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (i64 p = 0; p < plane; ++p) {
    const i64 oy = p / ow, ox = p % ow;
    double shared_dy = 0.0, shared_dx = 0.0;
    for (i64 t = 0; t < taps; ++t) {
      const i64 ki = t / g.kernel_w, kj = t % g.kernel_w;
      const double y = static_cast<double>(oy * g.stride - g.pad + ki * g.dilation);
      const double x = static_cast<double>(ox * g.stride - g.pad + kj * g.dilation);
      const auto o = offset_at(offsets, t, p, plane);
      double acc_y = 0.0, acc_x = 0.0;
      for (i64 ci = 0; ci < g.in_channels; ++ci) {
        const double gc = columns_grad[(ci * taps + t) * plane + p];
        double dy, dx;
        bilinear_position_grad(input + ci * g.in_h * g.in_w, g.in_h, g.in_w, y + o.dy, x + o.dx, dy, dx);
        acc_y += gc * dy;
        acc_x += gc * dx;
      }
      if (shared) {
        shared_dy += acc_y;
        shared_dx += acc_x;
      } else {
        offset_grad[(2 * t) * plane + p] += acc_y;
        offset_grad[(2 * t + 1) * plane + p] += acc_x;
      }
    }
    if (shared) {
      offset_grad[p] += shared_dy;
      offset_grad[plane + p] += shared_dx;
    }
  }
}

void conv2d_forward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                    const double* bias, double* out) {
  const i64 plane = g.out_h() * g.out_w(), taps = g.taps();
  const i64 cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups, kdim = cin_g * taps;
  std::vector<double> cols(static_cast<std::size_t>(g.in_channels * taps * plane));
  im2col(g, input, offsets, cols.data());
  for (i64 grp = 0; grp < g.groups; ++grp) {
    gemm(cout_g, plane, kdim, weight + grp * cout_g * kdim, kdim, 1, cols.data() + grp * kdim * plane, plane, 1,
         out + grp * cout_g * plane, false);
  }
  if (bias) {
    for (i64 co = 0; co < g.out_channels; ++co) {
      double* o = out + co * plane;
      for (i64 p = 0; p < plane; ++p) o[p] += bias[co];
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                     const double* grad_out, double* grad_input, double* grad_offsets, double* grad_weight,
                     double* grad_bias) {
  const i64 plane = g.out_h() * g.out_w(), taps = g.taps();
  const i64 cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups, kdim = cin_g * taps;
  const auto ncols = static_cast<std::size_t>(g.in_channels * taps * plane);
  std::vector<double> cols(ncols);
  if (grad_weight || grad_offsets) {
    // col2offset needs the input itself, not the columns; columns only for the weight.
    if (grad_weight) im2col(g, input, offsets, cols.data());
  }
  if (grad_weight) {
    for (i64 grp = 0; grp < g.groups; ++grp) {
      gemm(cout_g, kdim, plane, grad_out + grp * cout_g * plane, plane, 1, cols.data() + grp * kdim * plane, 1,
           plane, grad_weight + grp * cout_g * kdim, true);
    }
  }
  if (grad_bias) {
    for (i64 co = 0; co < g.out_channels; ++co) {
      const double* go = grad_out + co * plane;
      double s = 0.0;
      for (i64 p = 0; p < plane; ++p) s += go[p];
      grad_bias[co] += s;
    }
  }
  if (grad_input || grad_offsets) {
    std::vector<double>& dcols = cols;
    for (i64 grp = 0; grp < g.groups; ++grp) {
      gemm(kdim, plane, cout_g, weight + grp * cout_g * kdim, 1, kdim, grad_out + grp * cout_g * plane, plane, 1,
           dcols.data() + grp * kdim * plane, false);
    }
    if (grad_input) col2im(g, dcols.data(), offsets, grad_input);
    if (grad_offsets && offsets.data) col2offset(g, dcols.data(), input, offsets, grad_offsets);
  }
}

void conv_transpose2d_forward(const ConvGeometry& g, const double* input, const double* weight,
                              const double* bias, double* out) {
  const i64 plane_in = g.out_h() * g.out_w(), taps = g.taps();
  const i64 cin = g.out_channels, cout = g.in_channels, kdim = cout * taps;
  std::vector<double> cols(static_cast<std::size_t>(kdim * plane_in));
  gemm(kdim, plane_in, cin, weight, 1, kdim, input, plane_in, 1, cols.data(), false);
  const i64 plane_out = g.in_h * g.in_w;
  std::fill(out, out + cout * plane_out, 0.0);
  col2im(g, cols.data(), OffsetView{}, out);
  if (bias) {
    for (i64 co = 0; co < cout; ++co) {
      double* o = out + co * plane_out;
      for (i64 p = 0; p < plane_out; ++p) o[p] += bias[co];
    }
  }
}

void conv_transpose2d_backward(const ConvGeometry& g, const double* input, const double* weight,
                               const double* grad_out, double* grad_input, double* grad_weight,
                               double* grad_bias) {
  const i64 plane_in = g.out_h() * g.out_w(), taps = g.taps();
  const i64 cin = g.out_channels, cout = g.in_channels, kdim = cout * taps;
  const i64 plane_out = g.in_h * g.in_w;
  std::vector<double> gcols(static_cast<std::size_t>(kdim * plane_in));
  im2col(g, grad_out, OffsetView{}, gcols.data());
  if (grad_input) gemm(cin, plane_in, kdim, weight, kdim, 1, gcols.data(), plane_in, 1, grad_input, true);
  if (grad_weight) gemm(cin, kdim, plane_in, input, plane_in, 1, gcols.data(), 1, plane_in, grad_weight, true);
  if (grad_bias) {
    for (i64 co = 0; co < cout; ++co) {
      const double* go = grad_out + co * plane_out;
      double s = 0.0;
      for (i64 p = 0; p < plane_out; ++p) s += go[p];
      grad_bias[co] += s;
    }
  }
}

// --- grid sampling -----------------------------------------------------------

void grid_sample2d_forward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                           const double* positions, double* out) {
  const i64 plane = height * width;
  const bool par = batch * count * channels > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (i64 bl = 0; bl < batch * count; ++bl) {
    const i64 b = bl / count, l = bl % count;
    const double y = positions[2 * bl], x = positions[2 * bl + 1];
    for (i64 c = 0; c < channels; ++c) {
      out[(b * channels + c) * count + l] = bilinear(f + c * plane, height, width, y, x);
    }
  }
}

void grid_sample2d_backward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                            const double* positions, const double* grad_out, double* grad_f,
                            double* grad_positions) {
  const i64 plane = height * width;
  const bool par = batch * count * channels > kParallelWork;
  if (grad_f) {
#pragma omp parallel for schedule(static) if (par)
    for (i64 c = 0; c < channels; ++c) {
      for (i64 bl = 0; bl < batch * count; ++bl) {
        const i64 b = bl / count, l = bl % count;
        bilinear_scatter(grad_f + c * plane, height, width, positions[2 * bl], positions[2 * bl + 1],
                         grad_out[(b * channels + c) * count + l]);
      }
    }
  }
  if (grad_positions) {
#pragma omp parallel for schedule(static) if (par)
    for (i64 bl = 0; bl < batch * count; ++bl) {
      const i64 b = bl / count, l = bl % count;
      double gy = 0.0, gx = 0.0;
      for (i64 c = 0; c < channels; ++c) {
        double dy, dx;
        bilinear_position_grad(f + c * plane, height, width, positions[2 * bl], positions[2 * bl + 1], dy, dx);
        const double go = grad_out[(b * channels + c) * count + l];
        gy += go * dy;
        gx += go * dx;
      }
      grad_positions[2 * bl] += gy;
      grad_positions[2 * bl + 1] += gx;
    }
  }
}

namespace {

// Visits the eight trilinear corners with their weights and the partial
// derivatives of those weights with respect to (z, y, x).
template <typename Fn>
void for_each_corner3(const detail::Corners3& c, Fn&& fn) {
  for (int bz = 0; bz < 2; ++bz) {
    const double wz = bz ? c.lz : 1.0 - c.lz, sz = bz ? 1.0 : -1.0;
    for (int by = 0; by < 2; ++by) {
      const double wy = by ? c.ly : 1.0 - c.ly, sy = by ? 1.0 : -1.0;
      for (int bx = 0; bx < 2; ++bx) {
        const double wx = bx ? c.lx : 1.0 - c.lx, sx = bx ? 1.0 : -1.0;
        fn(c.z0 + bz, c.y0 + by, c.x0 + bx, wz * wy * wx, sz * wy * wx, wz * sy * wx, wz * wy * sx);
      }
    }
  }
}

}  // namespace

void grid_sample3d_forward(i64 channels, i64 depth, i64 height, i64 width, const double* f, i64 batch,
                           i64 count, const double* positions, double* out) {
  const i64 vol = depth * height * width;
#pragma omp parallel for schedule(static) if (batch * count * channels > kParallelWork)
  for (i64 bl = 0; bl < batch * count; ++bl) {
    const i64 b = bl / count, l = bl % count;
    const auto c3 = detail::corners3(positions[3 * bl], positions[3 * bl + 1], positions[3 * bl + 2]);
    for (i64 c = 0; c < channels; ++c) {
      double v = 0.0;
      if (c3.valid) {
        const double* vc = f + c * vol;
        for_each_corner3(c3, [&](i64 z, i64 y, i64 x, double w, double, double, double) {
          if (detail::inside3(depth, height, width, z, y, x)) v += w * vc[(z * height + y) * width + x];
        });
      }
      out[(b * channels + c) * count + l] = v;
    }
  }
}

void grid_sample3d_backward(i64 channels, i64 depth, i64 height, i64 width, const double* f, i64 batch,
                            i64 count, const double* positions, const double* grad_out, double* grad_f,
                            double* grad_positions) {
  const i64 vol = depth * height * width;
  const bool par = batch * count * channels > kParallelWork;
  if (grad_f) {
#pragma omp parallel for schedule(static) if (par)
    for (i64 c = 0; c < channels; ++c) {
      double* gc = grad_f + c * vol;
      for (i64 bl = 0; bl < batch * count; ++bl) {
        const i64 b = bl / count, l = bl % count;
        const auto c3 = detail::corners3(positions[3 * bl], positions[3 * bl + 1], positions[3 * bl + 2]);
        if (!c3.valid) continue;
        const double go = grad_out[(b * channels + c) * count + l];
        for_each_corner3(c3, [&](i64 z, i64 y, i64 x, double w, double, double, double) {
          if (detail::inside3(depth, height, width, z, y, x)) gc[(z * height + y) * width + x] += w * go;
        });
      }
    }
  }
  if (grad_positions) {
#pragma omp parallel for schedule(static) if (par)
    for (i64 bl = 0; bl < batch * count; ++bl) {
      const i64 b = bl / count, l = bl % count;
      const auto c3 = detail::corners3(positions[3 * bl], positions[3 * bl + 1], positions[3 * bl + 2]);
      if (!c3.valid) continue;
      double gz = 0.0, gy = 0.0, gx = 0.0;
      for (i64 c = 0; c < channels; ++c) {
        const double* vc = f + c * vol;
        const double go = grad_out[(b * channels + c) * count + l];
        for_each_corner3(c3, [&](i64 z, i64 y, i64 x, double, double dz, double dy, double dx) {
          if (!detail::inside3(depth, height, width, z, y, x)) return;
          const double v = vc[(z * height + y) * width + x] * go;
          gz += dz * v;
          gy += dy * v;
          gx += dx * v;
        });
      }
      grad_positions[3 * bl] += gz;
      grad_positions[3 * bl + 1] += gy;
      grad_positions[3 * bl + 2] += gx;
    }
  }
}

// --- gathered (neighborhood) attention -----------------------------------------

void gather_attention_forward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                              std::span<const std::int32_t> index, double scale, double* out, double* attn) {
  const i64 rows = d.heads * d.length;
  const bool par = rows * d.neighbors * (d.key_dim + d.value_dim) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (i64 r = 0; r < rows; ++r) {
    const i64 h = r / d.length, l = r % d.length;
    const double* qr = q + r * d.key_dim;
    double* ar = attn + r * d.neighbors;
    double mx = -std::numeric_limits<double>::infinity();
    for (i64 j = 0; j < d.neighbors; ++j) {
      const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
      const double* kr = k + (h * d.length + m) * d.key_dim;
      double s = 0.0;
      for (i64 c = 0; c < d.key_dim; ++c) s += qr[c] * kr[c];
      ar[j] = s * scale;
      mx = std::max(mx, ar[j]);
    }
    double z = 0.0;
    for (i64 j = 0; j < d.neighbors; ++j) {
      ar[j] = std::exp(ar[j] - mx);
      z += ar[j];
    }
    double* orow = out + r * d.value_dim;
    std::fill(orow, orow + d.value_dim, 0.0);
    for (i64 j = 0; j < d.neighbors; ++j) {
      ar[j] /= z;
      const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
      const double* vr = v + (h * d.length + m) * d.value_dim;
      for (i64 c = 0; c < d.value_dim; ++c) orow[c] += ar[j] * vr[c];
    }
  }
}

void gather_attention_backward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                               std::span<const std::int32_t> index, double scale, const double* attn,
                               const double* grad_out, double* grad_q, double* grad_k, double* grad_v) {
  const i64 rows = d.heads * d.length;
  std::vector<double> dscore(static_cast<std::size_t>(rows * d.neighbors));
  const bool par = rows * d.neighbors * (d.key_dim + d.value_dim) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (i64 r = 0; r < rows; ++r) {
    const i64 h = r / d.length, l = r % d.length;
    const double* ar = attn + r * d.neighbors;
    const double* go = grad_out + r * d.value_dim;
    double* ds = dscore.data() + r * d.neighbors;
    double dot = 0.0;
    for (i64 j = 0; j < d.neighbors; ++j) {
      const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
      const double* vr = v + (h * d.length + m) * d.value_dim;
      double da = 0.0;
      for (i64 c = 0; c < d.value_dim; ++c) da += go[c] * vr[c];
      ds[j] = da;
      dot += ar[j] * da;
    }
    for (i64 j = 0; j < d.neighbors; ++j) ds[j] = ar[j] * (ds[j] - dot) * scale;
    if (grad_q) {
      double* gq = grad_q + r * d.key_dim;
      for (i64 j = 0; j < d.neighbors; ++j) {
        const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
        const double* kr = k + (h * d.length + m) * d.key_dim;
        for (i64 c = 0; c < d.key_dim; ++c) gq[c] += ds[j] * kr[c];
      }
    }
  }
  if (!grad_k && !grad_v) return;
  // Scatter into keys/values: heads own disjoint slices.
#pragma omp parallel for schedule(static) if (par && d.heads > 1)
  for (i64 h = 0; h < d.heads; ++h) {
    for (i64 l = 0; l < d.length; ++l) {
      const i64 r = h * d.length + l;
      const double* qr = q + r * d.key_dim;
      const double* go = grad_out + r * d.value_dim;
      const double* ar = attn + r * d.neighbors;
      const double* ds = dscore.data() + r * d.neighbors;
      for (i64 j = 0; j < d.neighbors; ++j) {
        const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
        if (grad_k) {
          double* gk = grad_k + (h * d.length + m) * d.key_dim;
          for (i64 c = 0; c < d.key_dim; ++c) gk[c] += ds[j] * qr[c];
        }
        if (grad_v) {
          double* gv = grad_v + (h * d.length + m) * d.value_dim;
          for (i64 c = 0; c < d.value_dim; ++c) gv[c] += ar[j] * go[c];
        }
      }
    }
  }
}

}  // namespace agile::kernels
