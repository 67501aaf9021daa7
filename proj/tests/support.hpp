#pragma once

// Helpers shared by the test binaries. The finite-difference oracle here is
// deliberately independent of the library's gradcheck driver.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "agile/ops.hpp"
#include "agile/rng.hpp"
#include "agile/tensor.hpp"
#include "oracles.hpp"

namespace agile::test {

using oracle::rand_tensor;

inline Tensor tensor(Shape shape, std::vector<double> v) { return Tensor(std::move(shape), std::move(v)); }

using oracle::max_abs_diff;

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

inline Tensor with_value(const Tensor& t, std::int64_t i, double v) {
  std::vector<double> d(t.data().begin(), t.data().end());
  d[static_cast<std::size_t>(i)] = v;
  return Tensor(t.shape(), std::move(d));
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Worst relative error (absolute floor 1e-6) between tape gradients and
/// central differences of sum(fn(x) * R) over every input element.
inline double fd_worst(const Fn& fn, const std::vector<Tensor>& xs, std::uint64_t seed = 7, double h = 1e-3) {
  std::vector<Tensor> leaves;
  for (const auto& x : xs) leaves.push_back(x.with_grad());
  Tensor r;
  std::vector<Tensor> grads;
  {
    Tape tape;
    const auto y = fn(leaves);
    SplitMix64 rng(seed);
    r = rand_tensor(rng, y.shape());
    const auto g = tape.backward(sum(mul(y, r)));
    for (const auto& l : leaves) grads.push_back(g.of(l));
  }
  auto objective = [&](const std::vector<Tensor>& in) {
    const auto y = fn(in);
    double s = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::int64_t i = 0; i < xs[k].numel(); ++i) {
      auto plus = xs, minus = xs;
      plus[k] = with_value(xs[k], i, xs[k][i] + h);
      minus[k] = with_value(xs[k], i, xs[k][i] - h);
      const double num = (objective(plus) - objective(minus)) / (2 * h);
      const double ana = grads[k][i];
      const double diff = std::abs(ana - num);
      if (diff > 1e-6) worst = std::max(worst, diff / std::max(std::abs(ana), std::abs(num)));
    }
  }
  return worst;
}

}  // namespace agile::test
