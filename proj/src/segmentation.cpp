#include "agile/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "agile/error.hpp"
#include "agile/ops.hpp"

namespace agile {

using i64 = std::int64_t;

LabelMask nearest_downsample(const LabelMask& m, i64 factor) {
  if (factor < 1 || m.height % factor || m.width % factor) {
    throw DimensionError("label downsample: " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                         " is not divisible by " + std::to_string(factor));
  }
  LabelMask out{m.height / factor, m.width / factor, {}};
  out.values.reserve(static_cast<std::size_t>(out.size()));
  for (i64 y = 0; y < out.height; ++y) {
    for (i64 x = 0; x < out.width; ++x) out.values.push_back(m.at(y * factor, x * factor));
  }
  return out;
}

LabelMask argmax_mask(const Tensor& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax_mask: logits must be [C,H,W], got " + shape_str(logits.shape()));
  const i64 c = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  LabelMask m{logits.dim(1), logits.dim(2), std::vector<std::int32_t>(static_cast<std::size_t>(n), 0)};
  const double* z = logits.ptr();
  for (i64 i = 0; i < n; ++i) {
    i64 best = 0;
    for (i64 k = 1; k < c; ++k) {
      if (z[k * n + i] > z[best * n + i]) best = k;
    }
    m.values[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  return m;
}

namespace {

void check_labels(const Tensor& logits, const LabelMask& label, const char* op) {
  if (logits.rank() != 3 || logits.dim(1) != label.height || logits.dim(2) != label.width) {
    throw DimensionError(std::string(op) + ": logits " + shape_str(logits.shape()) + " do not match a " +
                         std::to_string(label.height) + "x" + std::to_string(label.width) + " label");
  }
  const i64 c = logits.dim(0);
  for (auto v : label.values) {
    if (v < 0 || v >= c) {
      throw DimensionError(std::string(op) + ": label value " + std::to_string(v) + " outside the " +
                           std::to_string(c) + " classes of the logits");
    }
  }
}

}  // namespace

Tensor one_hot(const LabelMask& label, i64 classes) {
  const i64 n = label.size();
  std::vector<double> g(static_cast<std::size_t>(classes * n), 0.0);
  for (i64 i = 0; i < n; ++i) {
    const auto v = label.values[static_cast<std::size_t>(i)];
    if (v < 0 || v >= classes) throw DimensionError("one_hot: label " + std::to_string(v) + " out of range");
    g[static_cast<std::size_t>(v * n + i)] = 1.0;
  }
  return Tensor({classes, n}, std::move(g));
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda: must lie in [0, 1], got " + std::to_string(lambda));
}

Tensor dice_loss(const Tensor& logits, const LabelMask& label) {
  check_labels(logits, label, "dice_loss");
  const i64 c = logits.dim(0), n = label.size();
  const auto g = one_hot(label, c);
  auto p = softmax(reshape(logits, {c, n}), 0);
  auto inter = sum_axis(mul(p, g), 1);
  auto den = add_scalar(add(sum_axis(p, 1), sum_axis(g, 1)), kDiceEpsilon);
  auto dice = div(add_scalar(scale(inter, 2.0), kDiceEpsilon), den);
  return add_scalar(scale(mean(dice), -1.0), 1.0);
}

Tensor cross_entropy(const Tensor& logits, const LabelMask& label) {
  check_labels(logits, label, "cross_entropy");
  const i64 c = logits.dim(0), n = label.size();
  auto prob = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c * n));
  const double* z = logits.ptr();
  double total = 0.0;
  for (i64 i = 0; i < n; ++i) {
    double m = z[i];
    for (i64 k = 1; k < c; ++k) m = std::max(m, z[k * n + i]);
    double s = 0.0;
    for (i64 k = 0; k < c; ++k) {
      const double e = std::exp(z[k * n + i] - m);
      (*prob)[static_cast<std::size_t>(k * n + i)] = e;
      s += e;
    }
    for (i64 k = 0; k < c; ++k) (*prob)[static_cast<std::size_t>(k * n + i)] /= s;
    total += m + std::log(s) - z[label.values[static_cast<std::size_t>(i)] * n + i];
  }
  auto labels = std::make_shared<std::vector<std::int32_t>>(label.values);
  return detail::record(Tensor::scalar(total / static_cast<double>(n)), {logits},
                        [prob, labels, c, n](std::span<const double> go, GradSlots gi) {
                          auto& gz = *gi[0];
                          const double s = go[0] / static_cast<double>(n);
                          for (i64 k = 0; k < c; ++k) {
                            for (i64 i = 0; i < n; ++i) gz[k * n + i] += s * (*prob)[k * n + i];
                          }
                          for (i64 i = 0; i < n; ++i) gz[(*labels)[i] * n + i] -= s;
                        });
}

Tensor combined_loss(const Tensor& logits, const std::vector<Tensor>& aux_logits, const LabelMask& label,
                     const LossConfig& cfg) {
  cfg.validate();
  auto head = [&](const Tensor& z, const LabelMask& target) {
    return add(scale(dice_loss(z, target), cfg.lambda), scale(cross_entropy(z, target), 1.0 - cfg.lambda));
  };
  std::vector<double> w{1.0};
  for (std::size_t i = 0; i < aux_logits.size(); ++i) w.push_back(std::ldexp(1.0, -static_cast<int>(i + 1)));
  double total = 0.0;
  for (double v : w) total += v;
  auto loss = scale(head(logits, label), w[0] / total);
  for (std::size_t i = 0; i < aux_logits.size(); ++i) {
    const auto& z = aux_logits[i];
    if (z.rank() != 3 || z.dim(1) < 1 || label.height % z.dim(1)) {
      throw DimensionError("combined_loss: aux logits " + shape_str(z.shape()) + " do not divide the label extent");
    }
    loss = add(loss, scale(head(z, nearest_downsample(label, label.height / z.dim(1))), w[i + 1] / total));
  }
  return loss;
}

double dsc_metric(const LabelMask& pred, const LabelMask& label, std::int32_t c) {
  if (pred.height != label.height || pred.width != label.width) throw DimensionError("dsc_metric: mask shapes differ");
  i64 p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool a = pred.values[i] == c, b = label.values[i] == c;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::pair<i64, i64>> boundary_pixels(const LabelMask& m, std::int32_t c) {
  std::vector<std::pair<i64, i64>> out;
  auto inside = [&](i64 y, i64 x) { return y >= 0 && y < m.height && x >= 0 && x < m.width && m.at(y, x) == c; };
  for (i64 y = 0; y < m.height; ++y) {
    for (i64 x = 0; x < m.width; ++x) {
      if (!inside(y, x)) continue;
      bool edge = false;
      for (i64 dy = -1; dy <= 1 && !edge; ++dy) {
        for (i64 dx = -1; dx <= 1; ++dx) {
          if ((dy || dx) && !inside(y + dy, x + dx)) {
            edge = true;
            break;
          }
        }
      }
      if (edge) out.emplace_back(y, x);
    }
  }
  return out;
}

namespace {

// Squared distance transform of a sampled function (Felzenszwalb &
// Huttenlocher), in place along one line of length n with stride.
void edt_1d(double* f, i64 n, i64 stride, std::vector<double>& d, std::vector<i64>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  i64 k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  auto at = [&](i64 q) { return f[q * stride]; };
  for (i64 q = 1; q < n; ++q) {
    if (at(q) == inf) continue;
    if (at(v[static_cast<std::size_t>(k)]) == inf) {
      v[static_cast<std::size_t>(k)] = q;
      continue;
    }
    double s;
    while (true) {
      const i64 r = v[static_cast<std::size_t>(k)];
      s = ((at(q) + static_cast<double>(q * q)) - (at(r) + static_cast<double>(r * r))) / static_cast<double>(2 * (q - r));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k + 1)] = inf;
  }
  if (at(v[0]) == inf) return;  // no features on this line
  k = 0;
  for (i64 q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k + 1)] < static_cast<double>(q)) ++k;
    const i64 r = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = static_cast<double>((q - r) * (q - r)) + at(r);
  }
  for (i64 q = 0; q < n; ++q) f[q * stride] = d[static_cast<std::size_t>(q)];
}

// Squared Euclidean distance from every pixel to the nearest feature pixel.
std::vector<double> squared_edt(const std::vector<std::pair<i64, i64>>& features, i64 h, i64 w) {
  std::vector<double> f(static_cast<std::size_t>(h * w), std::numeric_limits<double>::infinity());
  for (auto [y, x] : features) f[static_cast<std::size_t>(y * w + x)] = 0.0;
  const i64 n = std::max(h, w);
  std::vector<double> d(static_cast<std::size_t>(n));
  std::vector<i64> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n + 1));
  for (i64 x = 0; x < w; ++x) edt_1d(f.data() + x, h, w, d, v, z);
  for (i64 y = 0; y < h; ++y) edt_1d(f.data() + y * w, w, 1, d, v, z);
  return f;
}

}  // namespace

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UndefinedMetric("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double hd95_metric(const LabelMask& pred, const LabelMask& label, std::int32_t c) {
  if (pred.height != label.height || pred.width != label.width) throw DimensionError("hd95_metric: mask shapes differ");
  const auto bp = boundary_pixels(pred, c), bg = boundary_pixels(label, c);
  if (bp.empty() || bg.empty()) {
    throw UndefinedMetric("hd95: class " + std::to_string(c) + " is empty in the " +
                          (bp.empty() ? "prediction" : "label"));
  }
  const auto to_g = squared_edt(bg, label.height, label.width);
  const auto to_p = squared_edt(bp, pred.height, pred.width);
  std::vector<double> dist;
  dist.reserve(bp.size() + bg.size());
  for (auto [y, x] : bp) dist.push_back(std::sqrt(to_g[static_cast<std::size_t>(y * label.width + x)]));
  for (auto [y, x] : bg) dist.push_back(std::sqrt(to_p[static_cast<std::size_t>(y * pred.width + x)]));
  return percentile(std::move(dist), 0.95);
}

double mean_foreground_dsc(const LabelMask& pred, const LabelMask& label, i64 num_classes) {
  double s = 0.0;
  for (std::int32_t c = 1; c < num_classes; ++c) s += dsc_metric(pred, label, c);
  return s / static_cast<double>(num_classes - 1);
}

MetricsSummary summarize(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& labels, i64 num_classes) {
  if (preds.size() != labels.size() || preds.empty()) throw DimensionError("summarize: need matching, non-empty sets");
  MetricsSummary s;
  s.num_classes = num_classes;
  double hd_sum = 0.0;
  i64 hd_classes = 0;
  for (std::int32_t c = 1; c < num_classes; ++c) {
    double dsc = 0.0, hd = 0.0;
    i64 defined = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      dsc += dsc_metric(preds[i], labels[i], c);
      try {
        hd += hd95_metric(preds[i], labels[i], c);
        ++defined;
      } catch (const UndefinedMetric&) {
      }
    }
    s.dsc.push_back(dsc / static_cast<double>(preds.size()));
    if (defined) {
      s.hd95.emplace_back(hd / static_cast<double>(defined));
      hd_sum += *s.hd95.back();
      ++hd_classes;
    } else {
      s.hd95.emplace_back();
    }
  }
  double m = 0.0;
  for (double v : s.dsc) m += v;
  s.dsc_mean = m / static_cast<double>(s.dsc.size());
  if (hd_classes) s.hd95_mean = hd_sum / static_cast<double>(hd_classes);
  return s;
}

std::string MetricsSummary::to_text() const {
  std::string out;
  char buf[64];
  auto line = [&](const std::string& key, std::optional<double> v) {
    if (v) {
      std::snprintf(buf, sizeof buf, "%.17g", *v);
      out += key + "=" + buf + "\n";
    } else {
      out += key + "=nan\n";
    }
  };
  for (std::size_t c = 0; c < dsc.size(); ++c) line("dsc_" + std::to_string(c + 1), dsc[c]);
  line("dsc_mean", dsc_mean);
  for (std::size_t c = 0; c < hd95.size(); ++c) line("hd95_" + std::to_string(c + 1), hd95[c]);
  line("hd95_mean", hd95_mean);
  return out;
}

}  // namespace agile
