#pragma once

// Loop-based oracles shared by the tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "agile/attention.hpp"
#include "agile/rng.hpp"
#include "agile/segmentation.hpp"
#include "agile/tensor.hpp"

namespace agile::oracle {

using i64 = std::int64_t;

inline Tensor rand_tensor(SplitMix64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline AttentionWeights random_weights(SplitMix64& rng, i64 df, i64 heads, bool offsets) {
  const i64 dk = df / heads;
  AttentionWeights w;
  w.query = rand_tensor(rng, {df, df}, -0.5, 0.5);
  w.query_bias = rand_tensor(rng, {df}, -0.1, 0.1);
  w.key = rand_tensor(rng, {df, df}, -0.5, 0.5);
  w.key_bias = rand_tensor(rng, {df}, -0.1, 0.1);
  w.value = rand_tensor(rng, {df, df}, -0.5, 0.5);
  w.value_bias = rand_tensor(rng, {df}, -0.1, 0.1);
  w.out = rand_tensor(rng, {df, df}, -0.5, 0.5);
  w.out_bias = rand_tensor(rng, {df}, -0.1, 0.1);
  w.offset_dw = offsets ? rand_tensor(rng, {df, 1, 5, 5}, -0.3, 0.3) : Tensor::zeros({df, 1, 5, 5});
  w.offset_dw_bias = offsets ? rand_tensor(rng, {df}, -0.1, 0.1) : Tensor::zeros({df});
  w.offset_pw = offsets ? rand_tensor(rng, {2 * heads, dk, 1, 1}, -0.5, 0.5) : Tensor::zeros({2 * heads, dk, 1, 1});
  w.offset_pw_bias = offsets ? rand_tensor(rng, {2 * heads}, -1, 1) : Tensor::zeros({2 * heads});
  return w;
}

// x[L, din] * W[din, dout] + b, by loops.
inline std::vector<double> project(const Tensor& x, const Tensor& w, const Tensor& b) {
  const i64 l = x.dim(0), din = x.dim(1), dout = w.dim(1);
  std::vector<double> y(static_cast<std::size_t>(l * dout));
  for (i64 i = 0; i < l; ++i) {
    for (i64 o = 0; o < dout; ++o) {
      double acc = b[o];
      for (i64 p = 0; p < din; ++p) acc += x[i * din + p] * w[p * dout + o];
      y[static_cast<std::size_t>(i * dout + o)] = acc;
    }
  }
  return y;
}

using KeysOf = std::function<std::vector<i64>(i64 location)>;

// Multi-head attention where query l attends to keys_of(l), computed with
// plain loops. Keys and values come from `kv_source[h]` (tokens per head).
inline Tensor attention_oracle(const Tensor& f, const std::vector<Tensor>& kv_source, const AttentionWeights& w, i64 heads,
                        const KeysOf& keys_of) {
  const i64 l = f.dim(0), df = f.dim(1), dk = df / heads;
  const auto q = project(f, w.query, w.query_bias);
  std::vector<double> concat(static_cast<std::size_t>(l * df), 0.0);
  for (i64 h = 0; h < heads; ++h) {
    const auto k = project(kv_source[static_cast<std::size_t>(h)], w.key, w.key_bias);
    const auto v = project(kv_source[static_cast<std::size_t>(h)], w.value, w.value_bias);
    for (i64 i = 0; i < l; ++i) {
      const auto keys = keys_of(i);
      std::vector<double> logits;
      for (i64 j : keys) {
        double s = 0.0;
        for (i64 c = 0; c < dk; ++c) s += q[i * df + h * dk + c] * k[j * df + h * dk + c];
        logits.push_back(s / std::sqrt(static_cast<double>(dk)));
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& a : logits) z += (a = std::exp(a - mx));
      for (std::size_t n = 0; n < keys.size(); ++n) {
        for (i64 c = 0; c < dk; ++c) concat[i * df + h * dk + c] += logits[n] / z * v[keys[n] * df + h * dk + c];
      }
    }
  }
  return Tensor({l, df}, project(Tensor({l, df}, concat), w.out, w.out_bias));
}

inline std::vector<Tensor> same_source(const Tensor& f, i64 heads) { return std::vector<Tensor>(heads, f); }

inline KeysOf all_keys(i64 l) {
  return [l](i64) {
    std::vector<i64> k(static_cast<std::size_t>(l));
    for (i64 i = 0; i < l; ++i) k[static_cast<std::size_t>(i)] = i;
    return k;
  };
}

// Shifted k x k patch, derived independently of neighborhood_index.
inline KeysOf patch_keys(GridShape g, i64 k) {
  return [g, k](i64 loc) {
    const i64 y = loc / g.width, x = loc % g.width;
    const i64 kh = std::min(k, g.height), kw = std::min(k, g.width);
    i64 y0 = y - kh / 2, x0 = x - kw / 2;
    y0 = std::max<i64>(0, std::min(y0, g.height - kh));
    x0 = std::max<i64>(0, std::min(x0, g.width - kw));
    std::vector<i64> keys;
    for (i64 dy = 0; dy < kh; ++dy) {
      for (i64 dx = 0; dx < kw; ++dx) keys.push_back((y0 + dy) * g.width + x0 + dx);
    }
    return keys;
  };
}

inline KeysOf window_keys(GridShape g, i64 win) {
  return [g, win](i64 loc) {
    const i64 y0 = loc / g.width / win * win, x0 = loc % g.width / win * win;
    std::vector<i64> keys;
    for (i64 dy = 0; dy < win; ++dy) {
      for (i64 dx = 0; dx < win; ++dx) keys.push_back((y0 + dy) * g.width + x0 + dx);
    }
    return keys;
  };
}

// Union of a few random ellipses of class 1.
inline LabelMask random_blobs(SplitMix64& rng, i64 n) {
  LabelMask m{n, n, std::vector<std::int32_t>(static_cast<std::size_t>(n * n), 0)};
  const int count = 1 + static_cast<int>(rng.below(3));
  for (int b = 0; b < count; ++b) {
    const double cy = rng.uniform(0, n), cx = rng.uniform(0, n), ry = rng.uniform(1, 8), rx = rng.uniform(1, 8);
    for (i64 y = 0; y < n; ++y) {
      for (i64 x = 0; x < n; ++x) {
        const double u = (y - cy) / ry, v = (x - cx) / rx;
        if (u * u + v * v <= 1.0) m.values[static_cast<std::size_t>(y * n + x)] = 1;
      }
    }
  }
  m.values[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n * n)))] = 1;
  return m;
}

inline std::vector<std::pair<i64, i64>> oracle_boundary(const LabelMask& m, std::int32_t c) {
  std::vector<std::pair<i64, i64>> out;
  for (i64 y = 0; y < m.height; ++y) {
    for (i64 x = 0; x < m.width; ++x) {
      if (m.at(y, x) != c) continue;
      bool edge = false;
      for (i64 dy = -1; dy <= 1; ++dy) {
        for (i64 dx = -1; dx <= 1; ++dx) {
          const i64 yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width || m.at(yy, xx) != c) edge = true;
        }
      }
      if (edge) out.emplace_back(y, x);
    }
  }
  return out;
}

inline double oracle_hd95(const LabelMask& a, const LabelMask& b, std::int32_t c) {
  const auto ba = oracle_boundary(a, c), bb = oracle_boundary(b, c);
  std::vector<double> d;
  auto directed = [&](const auto& from, const auto& to) {
    for (auto [y, x] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [v, u] : to) best = std::min(best, std::hypot(double(y - v), double(x - u)));
      d.push_back(best);
    }
  };
  directed(ba, bb);
  directed(bb, ba);
  std::sort(d.begin(), d.end());
  const double pos = 0.95 * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

}  // namespace agile::oracle
