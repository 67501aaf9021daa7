#pragma once

// Raw numeric kernels over contiguous row-major buffers.
//
// Functions in agile::kernels are the OpenMP-parallel production versions.
// Every parallel loop partitions over independent output elements, so
// results do not depend on the thread count. agile::kernels::reference holds
// plain serial loops with the same contracts, kept for equivalence tests and
// the benchmark.

#include <cstdint>
#include <span>

namespace agile::kernels {

using i64 = std::int64_t;

/// C[m,n] (+)= sum_p A(i,p) B(p,j). A(i,p) = A[i*a_rs + p*a_cs], same for B.
/// C is contiguous row-major.
void gemm(i64 m, i64 n, i64 k, const double* a, i64 a_rs, i64 a_cs, const double* b, i64 b_rs, i64 b_cs,
          double* c, bool accumulate);

/// Geometry shared by dense, deformable and transposed 2D convolution.
struct ConvGeometry {
  i64 in_channels = 1;
  i64 in_h = 1;
  i64 in_w = 1;
  i64 out_channels = 1;
  i64 kernel_h = 1;
  i64 kernel_w = 1;
  i64 stride = 1;
  i64 pad = 0;
  i64 dilation = 1;
  i64 groups = 1;

  i64 out_h() const { return (in_h + 2 * pad - dilation * (kernel_h - 1) - 1) / stride + 1; }
  i64 out_w() const { return (in_w + 2 * pad - dilation * (kernel_w - 1) - 1) / stride + 1; }
  i64 taps() const { return kernel_h * kernel_w; }
};

/// Offset layout for deformable sampling: one (dy, dx) pair per kernel tap,
/// or one pair per output location shared by all taps.
enum class OffsetMode { kPerTap, kShared };

/// Offset buffer is [2*taps, out_h, out_w] (per tap: channel 2t = dy,
/// 2t+1 = dx) or [2, out_h, out_w] (shared). A null offset pointer means the
/// rigid lattice.
struct OffsetView {
  const double* data = nullptr;
  OffsetMode mode = OffsetMode::kPerTap;
};

/// columns[ci*taps + t, oy*out_w + ox] = bilinear sample of input channel ci
/// at (oy*s - pad + i*d + dy, ox*s - pad + j*d + dx), zero outside.
void im2col(const ConvGeometry& g, const double* input, OffsetView offsets, double* columns);

/// Adjoint of im2col with respect to the input map: scatters columns back.
void col2im(const ConvGeometry& g, const double* columns, OffsetView offsets, double* input_grad);

/// Gradient of sum(columns_grad * im2col(input)) with respect to offsets.
void col2offset(const ConvGeometry& g, const double* columns_grad, const double* input, OffsetView offsets,
                double* offset_grad);

/// out[Cout, out_h, out_w] = conv(input, weight) (+ bias). weight is
/// [Cout, Cin/groups, kh, kw]. Offsets make it a deformable convolution.
void conv2d_forward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                    const double* bias, double* out);

/// Each gradient pointer may be null to skip it; non-null buffers accumulate.
void conv2d_backward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                     const double* grad_out, double* grad_input, double* grad_offsets, double* grad_weight,
                     double* grad_bias);

/// Transposed convolution. `g` describes the adjoint conv: g.in_* is the
/// transposed conv's OUTPUT map with g.in_channels = Cout, and g.out_* its
/// input with g.out_channels = Cin. weight is [Cin, Cout, kh, kw].
void conv_transpose2d_forward(const ConvGeometry& g, const double* input, const double* weight,
                              const double* bias, double* out);
void conv_transpose2d_backward(const ConvGeometry& g, const double* input, const double* weight,
                               const double* grad_out, double* grad_input, double* grad_weight,
                               double* grad_bias);

/// Bilinear sampling of f[C, H, W] at positions[B, L, 2] (row, col in pixel
/// units) into out[B, C, L]; zero padding outside the map.
void grid_sample2d_forward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                           const double* positions, double* out);
void grid_sample2d_backward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                            const double* positions, const double* grad_out, double* grad_f,
                            double* grad_positions);

/// Trilinear sampling of f[C, D, H, W] at positions[B, L, 3] (depth, row,
/// col) into out[B, C, L].
void grid_sample3d_forward(i64 channels, i64 depth, i64 height, i64 width, const double* f, i64 batch,
                           i64 count, const double* positions, double* out);
void grid_sample3d_backward(i64 channels, i64 depth, i64 height, i64 width, const double* f, i64 batch,
                            i64 count, const double* positions, const double* grad_out, double* grad_f,
                            double* grad_positions);

/// Attention of each query over a fixed gathered key set.
/// q[H, L, dk], k[H, L, dk], v[H, L, dv]; index[L, K] holds key locations.
/// Writes out[H, L, dv] and the softmax weights attn[H, L, K].
struct GatherAttentionDims {
  i64 heads = 1;
  i64 length = 1;
  i64 neighbors = 1;
  i64 key_dim = 1;
  i64 value_dim = 1;
};
void gather_attention_forward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                              std::span<const std::int32_t> index, double scale, double* out, double* attn);
void gather_attention_backward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                               std::span<const std::int32_t> index, double scale, const double* attn,
                               const double* grad_out, double* grad_q, double* grad_k, double* grad_v);

namespace reference {

void gemm(i64 m, i64 n, i64 k, const double* a, i64 a_rs, i64 a_cs, const double* b, i64 b_rs, i64 b_cs,
          double* c, bool accumulate);

/// Direct per-output-element loops, no column buffer.
void conv2d_forward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                    const double* bias, double* out);
void conv2d_backward(const ConvGeometry& g, const double* input, OffsetView offsets, const double* weight,
                     const double* grad_out, double* grad_input, double* grad_offsets, double* grad_weight,
                     double* grad_bias);

void grid_sample2d_forward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                           const double* positions, double* out);
void grid_sample2d_backward(i64 channels, i64 height, i64 width, const double* f, i64 batch, i64 count,
                            const double* positions, const double* grad_out, double* grad_f,
                            double* grad_positions);

void gather_attention_forward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                              std::span<const std::int32_t> index, double scale, double* out, double* attn);
void gather_attention_backward(const GatherAttentionDims& d, const double* q, const double* k, const double* v,
                               std::span<const std::int32_t> index, double scale, const double* attn,
                               const double* grad_out, double* grad_q, double* grad_k, double* grad_v);

}  // namespace reference

}  // namespace agile::kernels
