#include <algorithm>
#include <cmath>
#include <limits>

#include "agile/error.hpp"
#include "agile/segmentation.hpp"
#include "agile/synthetic.hpp"
#include "agile/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace agile;
using namespace agile::test;
using namespace agile::oracle;

namespace {

using i64 = std::int64_t;

LabelMask mask(i64 h, i64 w, std::vector<std::int32_t> v) { return {h, w, std::move(v)}; }

Tensor logits_for(const LabelMask& m, i64 classes, double scale_by) {
  return reshape(scale(one_hot(m, classes), scale_by), {classes, m.height, m.width});
}

}  // namespace

TEST_CASE("dice loss examples") {
  const auto g = mask(2, 2, {0, 1, 1, 1});
  CHECK(dice_loss(logits_for(g, 2, 60.0), g).item() < 1e-4);

  // Uniform prediction: per-class dice (2*0.5*|g| + e) / (0.5*L + |g| + e).
  const double e = kDiceEpsilon;
  const double d0 = (2 * 0.5 * 1 + e) / (0.5 * 4 + 1 + e), d1 = (2 * 0.5 * 3 + e) / (0.5 * 4 + 3 + e);
  CHECK(std::abs(dice_loss(Tensor::zeros({2, 2, 2}), g).item() - (1 - (d0 + d1) / 2)) < 1e-12);

  SplitMix64 rng(1);
  const auto lg = rand_tensor(rng, {2, 4, 4}, -2, 2);
  LabelMask m{4, 4, std::vector<std::int32_t>(16)};
  for (auto& v : m.values) v = static_cast<std::int32_t>(rng.below(2));
  CHECK(fd_worst([&](const auto& x) { return dice_loss(x[0], m); }, {lg}) < 1e-4);
  CHECK_THROWS_AS(dice_loss(Tensor::zeros({2, 3, 3}), g), DimensionError);
}

TEST_CASE("dice loss and cross-entropy ranges") {
  SplitMix64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto lg = rand_tensor(rng, {3, 5, 5}, -8, 8);
    LabelMask m{5, 5, std::vector<std::int32_t>(25)};
    for (auto& v : m.values) v = static_cast<std::int32_t>(rng.below(3));
    const double d = dice_loss(lg, m).item(), ce = cross_entropy(lg, m).item();
    CHECK(d >= 0.0);
    CHECK(d <= 1.0 + 1e-6);
    CHECK(ce >= 0.0);
  }
}

TEST_CASE("cross-entropy matches a direct formula and gradcheck") {
  SplitMix64 rng(3);
  const auto lg = rand_tensor(rng, {3, 2, 3}, -3, 3);
  const auto m = mask(2, 3, {0, 1, 2, 2, 1, 0});
  double expect = 0.0;
  for (i64 p = 0; p < 6; ++p) {
    double z = 0.0;
    for (i64 c = 0; c < 3; ++c) z += std::exp(lg[c * 6 + p]);
    expect += std::log(z) - lg[m.values[static_cast<std::size_t>(p)] * 6 + p];
  }
  CHECK(std::abs(cross_entropy(lg, m).item() - expect / 6) < 1e-12);
  CHECK(cross_entropy(logits_for(m, 3, 800.0), m).item() < 1e-12);
  CHECK(fd_worst([&](const auto& x) { return cross_entropy(x[0], m); }, {lg}) < 1e-5);
}

TEST_CASE("combined loss endpoints and weighting") {
  SplitMix64 rng(4);
  const auto lg = rand_tensor(rng, {3, 8, 8}, -2, 2);
  const auto aux = rand_tensor(rng, {3, 4, 4}, -2, 2);
  LabelMask m{8, 8, std::vector<std::int32_t>(64)};
  for (auto& v : m.values) v = static_cast<std::int32_t>(rng.below(3));
  CHECK(std::abs(combined_loss(lg, {}, m, {1.0}).item() - dice_loss(lg, m).item()) < 1e-12);
  CHECK(std::abs(combined_loss(lg, {}, m, {0.0}).item() - cross_entropy(lg, m).item()) < 1e-12);
  const double main = 0.6 * dice_loss(lg, m).item() + 0.4 * cross_entropy(lg, m).item();
  CHECK(std::abs(combined_loss(lg, {}, m, {}).item() - main) < 1e-12);
  const auto small = nearest_downsample(m, 2);
  const double a = 0.6 * dice_loss(aux, small).item() + 0.4 * cross_entropy(aux, small).item();
  CHECK(std::abs(combined_loss(lg, {aux}, m, {}).item() - (main + 0.5 * a) / 1.5) < 1e-12);
  CHECK_THROWS_AS(LossConfig{1.5}.validate(), ConfigError);
  CHECK(fd_worst([&](const auto& x) { return combined_loss(x[0], {x[1]}, m, {}); }, {lg, aux}) < 1e-4);
}

TEST_CASE("dsc metric examples") {
  const auto a = mask(2, 4, {1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(dsc_metric(a, a, 1) == 1.0);
  CHECK(dsc_metric(a, mask(2, 4, {0, 0, 0, 0, 1, 1, 1, 1}), 1) == 0.0);
  const auto b = mask(2, 4, {0, 0, 1, 1, 1, 1, 0, 0});
  CHECK(dsc_metric(a, b, 1) == 0.5);
  CHECK(dsc_metric(b, a, 1) == 0.5);
  CHECK(dsc_metric(a, b, 2) == 1.0);
}

TEST_CASE("hd95 examples") {
  const auto a = mask(3, 5, {0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0});
  const auto b = mask(3, 5, {0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0});
  CHECK(hd95_metric(a, a, 1) == 0.0);
  CHECK(hd95_metric(a, b, 1) == 3.0);
  CHECK_THROWS_AS(hd95_metric(a, mask(3, 5, std::vector<std::int32_t>(15, 0)), 1), UndefinedMetric);
}

TEST_CASE("hd95 equals the exhaustive distance oracle on 100 random 32x32 pairs") {
  SplitMix64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_blobs(rng, 32), b = random_blobs(rng, 32);
    const double h = hd95_metric(a, b, 1);
    CHECK(std::abs(h - oracle_hd95(a, b, 1)) < 1e-9);
    CHECK(h == hd95_metric(b, a, 1));
  }
}

TEST_CASE("boundary pixels use the 8-neighbor test with the image edge outside") {
  std::vector<std::int32_t> v(25, 1);
  const auto full = mask(5, 5, v);
  CHECK(boundary_pixels(full, 1).size() == 16);
  v[12] = 0;
  CHECK(boundary_pixels(mask(5, 5, v), 1).size() == 24);
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({3, 1, 2, 4}, 0.5) == 2.5);
  CHECK(percentile({5}, 0.95) == 5.0);
  CHECK(std::abs(percentile({0, 10}, 0.95) - 9.5) < 1e-12);
}

TEST_CASE("label helpers") {
  const auto m = mask(2, 4, {0, 1, 2, 0, 1, 1, 2, 2});
  CHECK(nearest_downsample(m, 2) == mask(1, 2, {0, 2}));
  const auto ties = argmax_mask(Tensor::zeros({3, 1, 2}));
  CHECK(ties.values == std::vector<std::int32_t>{0, 0});
  CHECK(argmax_mask(logits_for(m, 3, 2.0)) == m);
}

TEST_CASE("metrics summary") {
  const auto label = mask(2, 3, {0, 1, 1, 0, 2, 2});
  const auto pred = mask(2, 3, {0, 1, 0, 0, 0, 0});
  const auto s = summarize({pred, label}, {label, label}, 3);
  CHECK(s.dsc.size() == 2);
  CHECK(std::abs(s.dsc[0] - (2.0 / 3.0 + 1.0) / 2) < 1e-15);
  CHECK(std::abs(s.dsc[1] - 0.5) < 1e-15);
  REQUIRE(s.hd95[0]);
  CHECK_FALSE(s.hd95[1] == std::nullopt);
  const auto text = s.to_text();
  CHECK(text.find("dsc_1=") == 0);
  CHECK(text.find("\ndsc_mean=") != std::string::npos);
  CHECK(text.find("\nhd95_mean=") != std::string::npos);
  const auto none = summarize({mask(1, 2, {0, 0})}, {mask(1, 2, {0, 1})}, 2);
  CHECK(none.to_text().find("hd95_1=nan") != std::string::npos);
  CHECK(none.to_text().find("hd95_mean=nan") != std::string::npos);
  CHECK(mean_foreground_dsc(label, label, 3) == 1.0);
}

TEST_CASE("synthetic generator") {
  const auto a = gen_synthetic(42, 3, 64, 64), b = gen_synthetic(42, 3, 64, 64);
  CHECK(bit_equal(a.image, b.image));
  CHECK(a.label == b.label);
  CHECK_FALSE(gen_synthetic(43, 3, 64, 64).label == a.label);
  CHECK(a.image.shape() == Shape{1, 64, 64});
  CHECK_THROWS_AS(gen_synthetic(1, 1, 64, 64), ConfigError);
  CHECK_THROWS_AS(gen_synthetic(1, 3, 4, 64), ConfigError);

  int complete = 0;
  bool labels_ok = true, pixels_ok = true;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto smp = gen_synthetic(s, 3, 64, 64);
    std::array<i64, 3> counts{};
    for (auto v : smp.label.values) {
      labels_ok = labels_ok && v >= 0 && v < 3;
      if (labels_ok) ++counts[static_cast<std::size_t>(v)];
    }
    for (double v : smp.image.data()) pixels_ok = pixels_ok && v >= 0.0 && v <= 1.0;
    complete += counts[0] >= 20 && counts[1] >= 20 && counts[2] >= 20;
  }
  CHECK(labels_ok);
  CHECK(pixels_ok);
  CHECK(complete >= 950);
}

TEST_CASE("synthetic splits are seeded by split name and index") {
  const auto tr = synthetic_split(3, "train", 4, 3, 32, 32), te = synthetic_split(3, "test", 4, 3, 32, 32);
  CHECK_FALSE(tr[0].label == te[0].label);
  CHECK(synthetic_split(3, "train", 2, 3, 32, 32)[1].label == tr[1].label);
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(2e-3, 0, 2000) == 2e-3);
  CHECK(cosine_lr(2e-3, 1999, 2000) < 1e-3 * 2e-3);
  CHECK(std::abs(cosine_lr(1.0, 50, 101) - 0.5) < 1e-12);
}

TEST_CASE("AdamW step on a zero gradient applies only weight decay") {
  ParameterStore ps;
  const auto w = ps.add("w", tensor({2, 2}, {1, -2, 3, 0.5}));
  const auto b = ps.add("b", tensor({2}, {0.25, -1}));
  AdamW opt;
  opt.step(ps, {Tensor::zeros({2, 2}), Tensor::zeros({2})}, 0.1);
  CHECK(bit_equal(ps[b], tensor({2}, {0.25, -1})));
  const double k = 1 - 0.1 * 0.05;
  for (int i = 0; i < 4; ++i) CHECK(std::abs(ps[w][i] - k * tensor({4}, {1, -2, 3, 0.5})[i]) < 1e-15);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("AdamW first step moves each coordinate by about lr") {
  ParameterStore ps;
  const auto b = ps.add("b", tensor({3}, {0, 0, 0}));
  AdamW opt;
  opt.step(ps, {tensor({3}, {2, -0.01, 0})}, 0.01);
  CHECK(std::abs(ps[b][0] + 0.01) < 1e-8);
  CHECK(std::abs(ps[b][1] - 0.01) < 1e-6);
  CHECK(ps[b][2] == 0.0);
}

TEST_CASE("training: determinism, log rows, CSV") {
  const auto data = synthetic_split(1, "train", 4, 3, 32, 32);
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch = 2;
  auto n1 = Network::build(NetworkConfig::nano(), 0), n2 = Network::build(NetworkConfig::nano(), 0);
  std::vector<LogRow> seen;
  const auto l1 = train(n1, data, cfg, [&](const LogRow& r) { seen.push_back(r); });
  const auto l2 = train(n2, data, cfg);
  REQUIRE(l1.size() == 3);
  CHECK(seen.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(l1[i].step == static_cast<i64>(i));
    CHECK(log_csv_row(l1[i]) == log_csv_row(l2[i]));
    CHECK(l1[i].lr == cosine_lr(cfg.lr, l1[i].step, 3));
  }
  CHECK(log_csv_header() == "step,lr,loss,dsc");
  bool same = true;
  for (ParamId id = 0; id < n1.params().size(); ++id) same = same && bit_equal(n1.params()[id], n2.params()[id]);
  CHECK(same);
}

TEST_CASE("training on one repeated sample lowers the loss") {
  const auto data = synthetic_split(2, "train", 1, 3, 32, 32);
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 1;
  auto net = Network::build(NetworkConfig::nano(), 0);
  const auto log = train(net, data, cfg);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += log[static_cast<std::size_t>(i)].loss;
    last += log[static_cast<std::size_t>(20 + i)].loss;
  }
  CHECK(last < first);
}

TEST_CASE("non-finite loss aborts naming the step") {
  const auto data = synthetic_split(1, "train", 2, 3, 32, 32);
  auto net = Network::build(NetworkConfig::nano(), 0);
  net.params().set(net.params().size() - 1, Tensor::full(net.params()[net.params().size() - 1].shape(), NAN));
  TrainConfig cfg;
  cfg.steps = 2;
  try {
    train(net, data, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
