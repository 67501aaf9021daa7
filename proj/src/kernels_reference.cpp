#include <cmath>
#include <limits>
#include <vector>

#include "agile/kernels.hpp"
#include "sampling_math.hpp"

namespace agile::kernels::reference {

void gemm(i64 m, i64 n, i64 k, const double* a, i64 a_rs, i64 a_cs, const double* b, i64 b_rs, i64 b_cs,
          double* c, bool accumulate) {
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) {
      double s = 0.0;
      for (i64 p = 0; p < k; ++p) s += a[i * a_rs + p * a_cs] * b[p * b_rs + j * b_cs];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

namespace {

struct TapPosition {
  double y;
  double x;
};

TapPosition tap_position(const ConvGeometry& g, OffsetView off, i64 oy, i64 ox, i64 ki, i64 kj) {
  const i64 plane = g.out_h() * g.out_w(), p = oy * g.out_w() + ox, t = ki * g.kernel_w + kj;
  double y = static_cast<double>(oy * g.stride - g.pad + ki * g.dilation);
  double x = static_cast<double>(ox * g.stride - g.pad + kj * g.dilation);
  if (off.data) {
    if (off.mode == OffsetMode::kShared) {
      y += off.data[p];
      x += off.data[plane + p];
    } else {
      y += off.data[(2 * t) * plane + p];
      x += off.data[(2 * t + 1) * plane + p];
    }
  }
  return {y, x};
}

double* offset_slot(const ConvGeometry& g, OffsetView off, double* grad, i64 oy, i64 ox, i64 ki, i64 kj,
                    int axis) {
  const i64 plane = g.out_h() * g.out_w(), p = oy * g.out_w() + ox, t = ki * g.kernel_w + kj;
  if (off.mode == OffsetMode::kShared) return grad + axis * plane + p;
  return grad + (2 * t + axis) * plane + p;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                    const double* bias, double* out) {
  const i64 oh = g.out_h(), ow = g.out_w();
  const i64 cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
  for (i64 co = 0; co < g.out_channels; ++co) {
    const i64 grp = co / cout_g;
    for (i64 oy = 0; oy < oh; ++oy) {
      for (i64 ox = 0; ox < ow; ++ox) {
        double s = bias ? bias[co] : 0.0;
        for (i64 cl = 0; cl < cin_g; ++cl) {
          const i64 ci = grp * cin_g + cl;
          const double* plane = input + ci * g.in_h * g.in_w;
          for (i64 ki = 0; ki < g.kernel_h; ++ki) {
            for (i64 kj = 0; kj < g.kernel_w; ++kj) {
              const auto pos = tap_position(g, offsets, oy, ox, ki, kj);
              const double w = weight[((co * cin_g + cl) * g.kernel_h + ki) * g.kernel_w + kj];
              s += w * detail::bilinear(plane, g.in_h, g.in_w, pos.y, pos.x);
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = s;
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                     const double* grad_out, double* grad_input, double* grad_offsets, double* grad_weight,
                     double* grad_bias) {
  const i64 oh = g.out_h(), ow = g.out_w();
  const i64 cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
  for (i64 co = 0; co < g.out_channels; ++co) {
    const i64 grp = co / cout_g;
    for (i64 oy = 0; oy < oh; ++oy) {
      for (i64 ox = 0; ox < ow; ++ox) {
        const double go = grad_out[(co * oh + oy) * ow + ox];
        if (grad_bias) grad_bias[co] += go;
        for (i64 cl = 0; cl < cin_g; ++cl) {
          const i64 ci = grp * cin_g + cl;
          const double* plane = input + ci * g.in_h * g.in_w;
          for (i64 ki = 0; ki < g.kernel_h; ++ki) {
            for (i64 kj = 0; kj < g.kernel_w; ++kj) {
              const auto pos = tap_position(g, offsets, oy, ox, ki, kj);
              const i64 widx = ((co * cin_g + cl) * g.kernel_h + ki) * g.kernel_w + kj;
              if (grad_weight) grad_weight[widx] += go * detail::bilinear(plane, g.in_h, g.in_w, pos.y, pos.x);
              if (grad_input) {
                detail::bilinear_scatter(grad_input + ci * g.in_h * g.in_w, g.in_h, g.in_w, pos.y, pos.x,
                                         go * weight[widx]);
              }
              if (grad_offsets && offsets.data) {
                double dy, dx;
                detail::bilinear_position_grad(plane, g.in_h, g.in_w, pos.y, pos.x, dy, dx);
                *offset_slot(g, offsets, grad_offsets, oy, ox, ki, kj, 0) += go * weight[widx] * dy;
                *offset_slot(g, offsets, grad_offsets, oy, ox, ki, kj, 1) += go * weight[widx] * dx;
              }
            }
          }
        }
      }
    }
  }
}

void grid_sample2d_forward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                           const double* positions, double* out) {
  for (i64 b = 0; b < batch; ++b) {
    for (i64 c = 0; c < channels; ++c) {
      for (i64 l = 0; l < count; ++l) {
        const double* pos = positions + 2 * (b * count + l);
        out[(b * channels + c) * count + l] = detail::bilinear(f + c * height * width, height, width, pos[0], pos[1]);
      }
    }
  }
}

void grid_sample2d_backward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                            const double* positions, const double* grad_out, double* grad_f,
                            double* grad_positions) {
  for (i64 b = 0; b < batch; ++b) {
    for (i64 c = 0; c < channels; ++c) {
      for (i64 l = 0; l < count; ++l) {
        const double* pos = positions + 2 * (b * count + l);
        const double go = grad_out[(b * channels + c) * count + l];
        if (grad_f) detail::bilinear_scatter(grad_f + c * height * width, height, width, pos[0], pos[1], go);
        if (grad_positions) {
          double dy, dx;
          detail::bilinear_position_grad(f + c * height * width, height, width, pos[0], pos[1], dy, dx);
          grad_positions[2 * (b * count + l)] += go * dy;
          grad_positions[2 * (b * count + l) + 1] += go * dx;
        }
      }
    }
  }
}

void gather_attention_forward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                              std::span<const std::int32_t> index, double scale, double* out, double* attn) {
  std::vector<double> s(static_cast<std::size_t>(d.neighbors));
  for (i64 h = 0; h < d.heads; ++h) {
    for (i64 l = 0; l < d.length; ++l) {
      const i64 r = h * d.length + l;
      double mx = -std::numeric_limits<double>::infinity();
      for (i64 j = 0; j < d.neighbors; ++j) {
        const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
        double dot = 0.0;
        for (i64 c = 0; c < d.key_dim; ++c) dot += q[r * d.key_dim + c] * k[(h * d.length + m) * d.key_dim + c];
        s[static_cast<std::size_t>(j)] = dot * scale;
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (auto& e : s) z += std::exp(e - mx);
      for (i64 c = 0; c < d.value_dim; ++c) out[r * d.value_dim + c] = 0.0;
      for (i64 j = 0; j < d.neighbors; ++j) {
        const double a = std::exp(s[static_cast<std::size_t>(j)] - mx) / z;
        attn[r * d.neighbors + j] = a;
        const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
        for (i64 c = 0; c < d.value_dim; ++c) out[r * d.value_dim + c] += a * v[(h * d.length + m) * d.value_dim + c];
      }
    }
  }
}

void gather_attention_backward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                               std::span<const std::int32_t> index, double scale, const double* attn,
                               const double* grad_out, double* grad_q, double* grad_k, double* grad_v) {
  std::vector<double> da(static_cast<std::size_t>(d.neighbors));
  for (i64 h = 0; h < d.heads; ++h) {
    for (i64 l = 0; l < d.length; ++l) {
      const i64 r = h * d.length + l;
      double dot = 0.0;
      for (i64 j = 0; j < d.neighbors; ++j) {
        const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
        double acc = 0.0;
        for (i64 c = 0; c < d.value_dim; ++c) acc += grad_out[r * d.value_dim + c] * v[(h * d.length + m) * d.value_dim + c];
        da[static_cast<std::size_t>(j)] = acc;
        dot += attn[r * d.neighbors + j] * acc;
      }
      for (i64 j = 0; j < d.neighbors; ++j) {
        const i64 m = index[static_cast<std::size_t>(l * d.neighbors + j)];
        const double a = attn[r * d.neighbors + j];
        const double ds = a * (da[static_cast<std::size_t>(j)] - dot) * scale;
        for (i64 c = 0; c < d.key_dim; ++c) {
          if (grad_q) grad_q[r * d.key_dim + c] += ds * k[(h * d.length + m) * d.key_dim + c];
          if (grad_k) grad_k[(h * d.length + m) * d.key_dim + c] += ds * q[r * d.key_dim + c];
        }
        if (grad_v) {
          for (i64 c = 0; c < d.value_dim; ++c) grad_v[(h * d.length + m) * d.value_dim + c] += a * grad_out[r * d.value_dim + c];
        }
      }
    }
  }
}

}  // namespace agile::kernels::reference
