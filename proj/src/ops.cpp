#include "agile/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "agile/error.hpp"

namespace agile {

using i64 = std::int64_t;

namespace {

std::vector<double> buffer(i64 n) { return std::vector<double>(static_cast<std::size_t>(n)); }

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return axis;
}

// Broadcast of two shapes aligned on the right.
struct Broadcast {
  Shape out;
  std::vector<i64> a_stride;
  std::vector<i64> b_stride;
  bool same = false;
};

std::vector<i64> contiguous_strides(const Shape& s) {
  std::vector<i64> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

Broadcast broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  bc.a_stride.assign(r, 0);
  bc.b_stride.assign(r, 0);
  const auto as = contiguous_strides(a), bs = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const i64 ia = static_cast<i64>(i) - static_cast<i64>(r - a.size());
    const i64 ib = static_cast<i64>(i) - static_cast<i64>(r - b.size());
    const i64 da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const i64 db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    bc.out[i] = std::max(da, db);
    if (ia >= 0 && da != 1) bc.a_stride[i] = as[static_cast<std::size_t>(ia)];
    if (ib >= 0 && db != 1) bc.b_stride[i] = bs[static_cast<std::size_t>(ib)];
  }
  return bc;
}

// Calls fn(out_index, a_offset, b_offset) for every output element in order.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const i64 n = numel_of(bc.out);
  if (bc.same) {
    for (i64 i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t r = bc.out.size();
  std::vector<i64> idx(r, 0);
  i64 ao = 0, bo = 0;
  for (i64 i = 0; i < n; ++i) {
    fn(i, ao, bo);
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      ao += bc.a_stride[du];
      bo += bc.b_stride[du];
      if (idx[du] < bc.out[du]) break;
      ao -= bc.a_stride[du] * idx[du];
      bo -= bc.b_stride[du] * idx[du];
      idx[du] = 0;
    }
  }
}

enum class Binary { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  auto bc = broadcast_plan(a.shape(), b.shape(), name);
  auto out = buffer(numel_of(bc.out));
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  switch (kind) {
    case Binary::kAdd: for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) { out[i] = pa[x] + pb[y]; }); break;
    case Binary::kSub: for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) { out[i] = pa[x] - pb[y]; }); break;
    case Binary::kMul: for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) { out[i] = pa[x] * pb[y]; }); break;
    case Binary::kDiv: for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) { out[i] = pa[x] / pb[y]; }); break;
  }
  Tensor result(bc.out, std::move(out));
  return detail::record(result, {a, b}, [a, b, bc, kind](std::span<const double> g, GradSlots gi) {
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* ga = gi[0] ? gi[0]->data() : nullptr;
    double* gb = gi[1] ? gi[1]->data() : nullptr;
    for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) {
      switch (kind) {
        case Binary::kAdd:
          if (ga) ga[x] += g[i];
          if (gb) gb[y] += g[i];
          break;
        case Binary::kSub:
          if (ga) ga[x] += g[i];
          if (gb) gb[y] -= g[i];
          break;
        case Binary::kMul:
          if (ga) ga[x] += g[i] * pb[y];
          if (gb) gb[y] += g[i] * pa[x];
          break;
        case Binary::kDiv:
          if (ga) ga[x] += g[i] / pb[y];
          if (gb) gb[y] -= g[i] * pa[x] / (pb[y] * pb[y]);
          break;
      }
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kDiv, "div"); }

Tensor scale(const Tensor& a, double s) {
  auto out = buffer(a.numel());
  for (i64 i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return detail::record(Tensor(a.shape(), std::move(out)), {a}, [s](std::span<const double> g, GradSlots gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = buffer(a.numel());
  for (i64 i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
  return detail::record(Tensor(a.shape(), std::move(out)), {a}, [](std::span<const double> g, GradSlots gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor gelu(const Tensor& a) {
  const i64 n = a.numel();
  auto out = buffer(n);
  const double* x = a.ptr();
#pragma omp parallel for schedule(static) if (n > 8192)
  for (i64 i = 0; i < n; ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return detail::record(Tensor(a.shape(), std::move(out)), {a}, [a](std::span<const double> g, GradSlots gi) {
    auto& ga = *gi[0];
    const double* x = a.ptr();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const i64 n = a.numel();
#pragma omp parallel for schedule(static) if (n > 8192)
    for (i64 i = 0; i < n; ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::record(Tensor::scalar(s), {a}, [](std::span<const double> g, GradSlots gi) {
    for (auto& v : *gi[0]) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, int axis) {
  axis = normalize_axis(axis, a.rank(), "sum_axis");
  const auto& s = a.shape();
  i64 outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= s[i];
  const i64 n = s[axis];
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  auto out = buffer(outer * inner);
  for (i64 o = 0; o < outer; ++o) {
    for (i64 k = 0; k < n; ++k) {
      for (i64 i = 0; i < inner; ++i) out[o * inner + i] += a[(o * n + k) * inner + i];
    }
  }
  return detail::record(Tensor(out_shape, std::move(out)), {a},
                        [outer, inner, n](std::span<const double> g, GradSlots gi) {
                          auto& ga = *gi[0];
                          for (i64 o = 0; o < outer; ++o) {
                            for (i64 k = 0; k < n; ++k) {
                              for (i64 i = 0; i < inner; ++i) ga[(o * n + k) * inner + i] += g[o * inner + i];
                            }
                          }
                        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const i64 m = a.dim(-2), k = a.dim(-1), kb = b.dim(-2), n = b.dim(-1);
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Broadcast bc;
  try {
    bc = broadcast_plan(a_batch, b_batch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not broadcastable");
  }
  if (bc.out.empty()) bc.out.push_back(1), bc.a_stride.push_back(0), bc.b_stride.push_back(0), bc.same = false;
  Shape out_shape(bc.out);
  if (a_batch.empty() && b_batch.empty()) out_shape.clear();
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = buffer(numel_of(out_shape));
  const i64 a_mat = m * k, b_mat = k * n, o_mat = m * n;
  for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) {
    kernels::gemm(m, n, k, a.ptr() + x * a_mat, k, 1, b.ptr() + y * b_mat, n, 1, out.data() + i * o_mat, false);
  });
  return detail::record(
      Tensor(out_shape, std::move(out)), {a, b}, [a, b, bc, m, n, k](std::span<const double> g, GradSlots gi) {
        const i64 a_mat = m * k, b_mat = k * n, o_mat = m * n;
        for_each_broadcast(bc, [&](i64 i, i64 x, i64 y) {
          const double* go = g.data() + i * o_mat;
          // dA = G B^T, dB = A^T G
          if (gi[0]) kernels::gemm(m, k, n, go, n, 1, b.ptr() + y * b_mat, 1, n, gi[0]->data() + x * a_mat, true);
          if (gi[1]) kernels::gemm(k, n, m, a.ptr() + x * a_mat, 1, k, go, n, 1, gi[1]->data() + y * b_mat, true);
        });
      });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const auto& s = x.shape();
  i64 outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const i64 n = s[axis];
  auto out = buffer(x.numel());
  const double* px = x.ptr();
#pragma omp parallel for schedule(static) if (outer * inner * n > 8192)
  for (i64 r = 0; r < outer * inner; ++r) {
    const i64 o = r / inner, i = r % inner;
    const i64 base = o * n * inner + i;
    double mx = px[base];
    for (i64 j = 1; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
    double z = 0.0;
    for (i64 j = 0; j < n; ++j) {
      out[base + j * inner] = std::exp(px[base + j * inner] - mx);
      z += out[base + j * inner];
    }
    for (i64 j = 0; j < n; ++j) out[base + j * inner] /= z;
  }
  Tensor y(s, std::move(out));
  return detail::record(y, {x}, [y, outer, inner, n](std::span<const double> g, GradSlots gi) {
    auto& gx = *gi[0];
    const double* py = y.ptr();
#pragma omp parallel for schedule(static) if (outer * inner * n > 8192)
    for (i64 r = 0; r < outer * inner; ++r) {
      const i64 o = r / inner, i = r % inner;
      const i64 base = o * n * inner + i;
      double dot = 0.0;
      for (i64 j = 0; j < n; ++j) dot += g[base + j * inner] * py[base + j * inner];
      for (i64 j = 0; j < n; ++j) gx[base + j * inner] += py[base + j * inner] * (g[base + j * inner] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const i64 d = x.dim(-1);
  if (gain.numel() != d || shift.numel() != d) {
    throw DimensionError("layer_norm: gain/shift of " + shape_str(gain.shape()) + "/" + shape_str(shift.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
  }
  const i64 rows = x.numel() / d;
  auto out = buffer(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const double* px = x.ptr();
#pragma omp parallel for schedule(static) if (x.numel() > 8192)
  for (i64 r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (i64 j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (i64 j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (i64 j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gain[j] + shift[j];
    }
  }
  return detail::record(
      Tensor(x.shape(), std::move(out)), {x, gain, shift},
      [gain, xhat, rstd, rows, d](std::span<const double> g, GradSlots gi) {
        const double* xh = xhat->data();
        if (gi[1] || gi[2]) {
          for (i64 r = 0; r < rows; ++r) {
            for (i64 j = 0; j < d; ++j) {
              if (gi[1]) (*gi[1])[j] += g[r * d + j] * xh[r * d + j];
              if (gi[2]) (*gi[2])[j] += g[r * d + j];
            }
          }
        }
        if (!gi[0]) return;
        auto& gx = *gi[0];
#pragma omp parallel for schedule(static) if (rows * d > 8192)
        for (i64 r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (i64 j = 0; j < d; ++j) {
            const double dxh = g[r * d + j] * gain[j];
            m1 += dxh;
            m2 += dxh * xh[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (i64 j = 0; j < d; ++j) {
            const double dxh = g[r * d + j] * gain[j];
            gx[r * d + j] += (*rstd)[r] * (dxh - m1 - xh[r * d + j] * m2);
          }
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  Tensor out = a.reshaped_const(std::move(shape));
  return detail::record(out, {a}, [](std::span<const double> g, GradSlots gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

namespace {

// out[perm-indexed] gathered from `src`; returns in-order source offsets.
std::vector<i64> permute_offsets(const Shape& in, const std::vector<int>& perm) {
  const auto st = contiguous_strides(in);
  Shape out_shape(perm.size());
  std::vector<i64> src_stride(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out_shape[i] = in[static_cast<std::size_t>(perm[i])];
    src_stride[i] = st[static_cast<std::size_t>(perm[i])];
  }
  const i64 n = numel_of(in);
  std::vector<i64> offs(static_cast<std::size_t>(n));
  std::vector<i64> idx(perm.size(), 0);
  i64 off = 0;
  for (i64 i = 0; i < n; ++i) {
    offs[static_cast<std::size_t>(i)] = off;
    for (int d = static_cast<int>(perm.size()) - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      off += src_stride[du];
      if (idx[du] < out_shape[du]) break;
      off -= src_stride[du] * idx[du];
      idx[du] = 0;
    }
  }
  return offs;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != a.rank()) {
    throw DimensionError("permute: permutation of length " + std::to_string(perm.size()) + " for shape " +
                         shape_str(a.shape()));
  }
  std::vector<int> seen(perm.size(), 0);
  Shape out_shape;
  for (int p : perm) {
    if (p < 0 || p >= a.rank() || seen[static_cast<std::size_t>(p)]++) {
      throw DimensionError("permute: invalid permutation for shape " + shape_str(a.shape()));
    }
    out_shape.push_back(a.shape()[static_cast<std::size_t>(p)]);
  }
  auto offs = std::make_shared<std::vector<i64>>(permute_offsets(a.shape(), perm));
  auto out = buffer(a.numel());
  const double* pa = a.ptr();
  for (std::size_t i = 0; i < offs->size(); ++i) out[i] = pa[(*offs)[i]];
  return detail::record(Tensor(out_shape, std::move(out)), {a}, [offs](std::span<const double> g, GradSlots gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < offs->size(); ++i) ga[static_cast<std::size_t>((*offs)[i])] += g[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_str(a.shape()));
  std::vector<int> perm(static_cast<std::size_t>(a.rank()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, perm);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int rank = parts[0].rank();
  axis = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()));
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != parts[0].shape()[i]) {
        throw DimensionError("concat: shapes " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()) +
                             " differ off the concat axis");
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  i64 outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  const i64 total = out_shape[axis];
  auto out = buffer(numel_of(out_shape));
  std::vector<i64> starts;
  i64 at = 0;
  for (const auto& p : parts) {
    starts.push_back(at);
    const i64 len = p.shape()[axis];
    for (i64 o = 0; o < outer; ++o) {
      std::copy_n(p.ptr() + o * len * inner, len * inner, out.data() + (o * total + at) * inner);
    }
    at += len;
  }
  Tensor result(out_shape, std::move(out));
  Tape* tape = Tape::active();
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || (tape && tape->tracks(p));
  if (!tracked) return result;
  std::vector<i64> lens;
  for (const auto& p : parts) lens.push_back(p.shape()[axis]);
  return tape->record(result, parts, [starts, lens, outer, inner, total](std::span<const double> g, GradSlots gi) {
    for (std::size_t k = 0; k < lens.size(); ++k) {
      if (!gi[k]) continue;
      auto& gp = *gi[k];
      for (i64 o = 0; o < outer; ++o) {
        for (i64 e = 0; e < lens[k] * inner; ++e) gp[o * lens[k] * inner + e] += g[(o * total + starts[k]) * inner + e];
      }
    }
  });
}

Tensor slice(const Tensor& a, int axis, i64 start, i64 length) {
  axis = normalize_axis(axis, a.rank(), "slice");
  const i64 n = a.shape()[axis];
  if (start < 0 || length <= 0 || start + length > n) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis of size " + std::to_string(n));
  }
  i64 outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto out = buffer(numel_of(out_shape));
  for (i64 o = 0; o < outer; ++o) {
    std::copy_n(a.ptr() + (o * n + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return detail::record(Tensor(out_shape, std::move(out)), {a},
                        [outer, inner, n, start, length](std::span<const double> g, GradSlots gi) {
                          auto& ga = *gi[0];
                          for (i64 o = 0; o < outer; ++o) {
                            for (i64 e = 0; e < length * inner; ++e) ga[(o * n + start) * inner + e] += g[o * length * inner + e];
                          }
                        });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::int32_t>& index) {
  const i64 rows = a.dim(0), row = a.numel() / rows;
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<i64>(index.size());
  auto out = buffer(numel_of(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                           shape_str(a.shape()));
    }
    std::copy_n(a.ptr() + index[i] * row, row, out.data() + static_cast<i64>(i) * row);
  }
  return detail::record(Tensor(out_shape, std::move(out)), {a}, [index, row](std::span<const double> g, GradSlots gi) {
    auto& ga = *gi[0];
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (i64 e = 0; e < row; ++e) ga[index[i] * row + e] += g[static_cast<i64>(i) * row + e];
    }
  });
}

kernels::ConvGeometry conv_geometry(const Shape& input, const Shape& weight, ConvOptions opt) {
  if (input.size() != 3 || weight.size() != 4) {
    throw DimensionError("conv2d: expected input [C,H,W] and weight [Cout,Cin/g,kh,kw], got " + shape_str(input) +
                         " and " + shape_str(weight));
  }
  if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1 || opt.padding < 0) {
    throw DimensionError("conv2d: stride, dilation and groups must be positive, padding non-negative");
  }
  kernels::ConvGeometry g;
  g.in_channels = input[0];
  g.in_h = input[1];
  g.in_w = input[2];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.dilation = opt.dilation;
  g.groups = opt.groups;
  if (g.in_channels % g.groups || g.out_channels % g.groups || weight[1] != g.in_channels / g.groups) {
    throw DimensionError("conv2d: weight " + shape_str(weight) + " incompatible with input " + shape_str(input) +
                         " and groups=" + std::to_string(g.groups));
  }
  const i64 span_h = g.dilation * (g.kernel_h - 1) + 1, span_w = g.dilation * (g.kernel_w - 1) + 1;
  if (span_h > g.in_h + 2 * g.pad || span_w > g.in_w + 2 * g.pad) {
    throw DimensionError("conv2d: kernel " + shape_str(weight) + " larger than padded input " + shape_str(input) +
                         " (padding " + std::to_string(g.pad) + ")");
  }
  return g;
}

namespace {

void check_bias(const std::optional<Tensor>& bias, i64 channels, const char* op) {
  if (bias && bias->numel() != channels) {
    throw DimensionError(std::string(op) + ": bias of shape " + shape_str(bias->shape()) + " for " +
                         std::to_string(channels) + " output channels");
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, ConvOptions opt) {
  const auto g = conv_geometry(input.shape(), weight.shape(), opt);
  check_bias(bias, g.out_channels, "conv2d");
  const Shape out_shape{g.out_channels, g.out_h(), g.out_w()};
  auto out = buffer(numel_of(out_shape));
  kernels::conv2d_forward(g, input.ptr(), {}, weight.ptr(), bias ? bias->ptr() : nullptr, out.data());
  const Tensor b = bias ? *bias : Tensor();
  const bool has_bias = bias.has_value();
  return detail::record(Tensor(out_shape, std::move(out)), {input, weight, b},
                        [g, input, weight, has_bias](std::span<const double> go, GradSlots gi) {
                          kernels::conv2d_backward(g, input.ptr(), {}, weight.ptr(), go.data(),
                                                   gi[0] ? gi[0]->data() : nullptr, nullptr,
                                                   gi[1] ? gi[1]->data() : nullptr,
                                                   (has_bias && gi[2]) ? gi[2]->data() : nullptr);
                        });
}

Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                     const std::optional<Tensor>& bias, ConvOptions opt) {
  const auto g = conv_geometry(input.shape(), weight.shape(), opt);
  check_bias(bias, g.out_channels, "deform_conv2d");
  const i64 oh = g.out_h(), ow = g.out_w();
  kernels::OffsetMode mode;
  if (offsets.shape() == Shape{2 * g.taps(), oh, ow}) {
    mode = kernels::OffsetMode::kPerTap;
  } else if (offsets.shape() == Shape{2, oh, ow}) {
    mode = kernels::OffsetMode::kShared;
  } else {
    throw DimensionError("deform_conv2d: offsets " + shape_str(offsets.shape()) + " must be [" +
                         std::to_string(2 * g.taps()) + "," + std::to_string(oh) + "," + std::to_string(ow) +
                         "] or [2," + std::to_string(oh) + "," + std::to_string(ow) + "]");
  }
  const Shape out_shape{g.out_channels, oh, ow};
  auto out = buffer(numel_of(out_shape));
  kernels::conv2d_forward(g, input.ptr(), {offsets.ptr(), mode}, weight.ptr(), bias ? bias->ptr() : nullptr,
                          out.data());
  const Tensor b = bias ? *bias : Tensor();
  const bool has_bias = bias.has_value();
  return detail::record(
      Tensor(out_shape, std::move(out)), {input, offsets, weight, b},
      [g, input, offsets, weight, mode, has_bias](std::span<const double> go, GradSlots gi) {
        kernels::conv2d_backward(g, input.ptr(), {offsets.ptr(), mode}, weight.ptr(), go.data(),
                                 gi[0] ? gi[0]->data() : nullptr, gi[1] ? gi[1]->data() : nullptr,
                                 gi[2] ? gi[2]->data() : nullptr, (has_bias && gi[3]) ? gi[3]->data() : nullptr);
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, i64 stride,
                        i64 padding) {
  if (input.rank() != 3 || weight.rank() != 4 || weight.dim(0) != input.dim(0)) {
    throw DimensionError("conv_transpose2d: input " + shape_str(input.shape()) + " and weight " +
                         shape_str(weight.shape()) + " are incompatible");
  }
  kernels::ConvGeometry g;
  g.out_channels = input.dim(0);
  g.in_channels = weight.dim(1);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.in_h = (input.dim(1) - 1) * stride - 2 * padding + g.kernel_h;
  g.in_w = (input.dim(2) - 1) * stride - 2 * padding + g.kernel_w;
  if (g.in_h <= 0 || g.in_w <= 0 || g.out_h() != input.dim(1) || g.out_w() != input.dim(2)) {
    throw DimensionError("conv_transpose2d: padding " + std::to_string(padding) + " too large for " +
                         shape_str(input.shape()));
  }
  check_bias(bias, g.in_channels, "conv_transpose2d");
  const Shape out_shape{g.in_channels, g.in_h, g.in_w};
  auto out = buffer(numel_of(out_shape));
  kernels::conv_transpose2d_forward(g, input.ptr(), weight.ptr(), bias ? bias->ptr() : nullptr, out.data());
  const Tensor b = bias ? *bias : Tensor();
  const bool has_bias = bias.has_value();
  return detail::record(Tensor(out_shape, std::move(out)), {input, weight, b},
                        [g, input, weight, has_bias](std::span<const double> go, GradSlots gi) {
                          kernels::conv_transpose2d_backward(g, input.ptr(), weight.ptr(), go.data(),
                                                             gi[0] ? gi[0]->data() : nullptr,
                                                             gi[1] ? gi[1]->data() : nullptr,
                                                             (has_bias && gi[2]) ? gi[2]->data() : nullptr);
                        });
}

Tensor nearest_downsample(const Tensor& x, i64 factor) {
  if (x.rank() != 3 || factor < 1 || x.dim(1) % factor || x.dim(2) % factor) {
    throw DimensionError("nearest_downsample: " + shape_str(x.shape()) + " not divisible by factor " +
                         std::to_string(factor));
  }
  const i64 c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h / factor, ow = w / factor;
  auto out = buffer(c * oh * ow);
  for (i64 ch = 0; ch < c; ++ch) {
    for (i64 i = 0; i < oh; ++i) {
      for (i64 j = 0; j < ow; ++j) out[(ch * oh + i) * ow + j] = x[(ch * h + i * factor) * w + j * factor];
    }
  }
  return detail::record(Tensor({c, oh, ow}, std::move(out)), {x},
                        [c, h, w, oh, ow, factor](std::span<const double> g, GradSlots gi) {
                          auto& gx = *gi[0];
                          for (i64 ch = 0; ch < c; ++ch) {
                            for (i64 i = 0; i < oh; ++i) {
                              for (i64 j = 0; j < ow; ++j) gx[(ch * h + i * factor) * w + j * factor] += g[(ch * oh + i) * ow + j];
                            }
                          }
                        });
}

Tensor tokens_to_map(const Tensor& tokens, i64 height, i64 width) {
  if (tokens.rank() != 2 || tokens.dim(0) != height * width) {
    throw DimensionError("tokens " + shape_str(tokens.shape()) + " do not cover a " + std::to_string(height) + "x" +
                         std::to_string(width) + " grid");
  }
  return permute(reshape(tokens, {height, width, tokens.dim(1)}), {2, 0, 1});
}

Tensor map_to_tokens(const Tensor& map) {
  if (map.rank() != 3) throw DimensionError("map_to_tokens: expected [C,H,W], got " + shape_str(map.shape()));
  return reshape(permute(map, {1, 2, 0}), {map.dim(1) * map.dim(2), map.dim(0)});
}

}  // namespace agile
