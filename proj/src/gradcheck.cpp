#include "agile/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "agile/attention.hpp"
#include "agile/deform.hpp"
#include "agile/error.hpp"
#include "agile/network.hpp"
#include "agile/ops.hpp"
#include "agile/posenc.hpp"
#include "agile/rng.hpp"
#include "agile/sampling.hpp"
#include "agile/segmentation.hpp"

namespace agile {

using i64 = std::int64_t;

double gradcheck_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

namespace {

double project(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (i64 i = 0; i < y.numel(); ++i) s += y[i] * r[i];
  return s;
}

Tensor random_tensor(SplitMix64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Values whose fractional part stays in [0.2, 0.8], away from the bilinear
// kinks at integer coordinates.
Tensor fractional_tensor(SplitMix64& rng, Shape shape, double max_int = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) {
    const double whole = std::floor(rng.uniform(-max_int, max_int + 1.0));
    x = whole + rng.uniform(0.2, 0.8);
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed, double h) {
  auto rng = SplitMix64(seed).split("gradcheck");
  std::vector<Tensor> inputs;
  for (const auto& in : c.inputs) inputs.push_back(in.value.with_grad());

  Tensor y0;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    y0 = c.fn(inputs);
    const auto r = random_tensor(rng, y0.shape());
    auto grads = tape.backward(sum(mul(y0, r)));
    for (const auto& t : inputs) analytic.push_back(grads.of(t));
    y0 = r;  // keep R
  }
  const Tensor& r = y0;

  std::vector<std::pair<std::size_t, i64>> coords;
  if (c.coord_budget <= 0) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (i64 k = 0; k < inputs[i].numel(); ++k) coords.emplace_back(i, k);
    }
  } else {
    // Group first, then a tensor of the group, then an element.
    std::map<std::string, std::vector<std::size_t>> members;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
      if (!members.count(c.inputs[i].group)) names.push_back(c.inputs[i].group);
      members[c.inputs[i].group].push_back(i);
    }
    for (i64 n = 0; n < c.coord_budget; ++n) {
      const auto& m = members[names[static_cast<std::size_t>(rng.below(names.size()))]];
      const auto i = m[static_cast<std::size_t>(rng.below(m.size()))];
      coords.emplace_back(i, static_cast<i64>(rng.below(static_cast<std::uint64_t>(inputs[i].numel()))));
    }
  }

  NoGradGuard guard;
  std::map<std::string, GroupResult> groups;
  std::vector<std::string> order;
  for (const auto& in : c.inputs) {
    if (!groups.count(in.group)) {
      groups[in.group] = GroupResult{in.group, 0.0, 0.0, 0, 0.0, 0.0};
      order.push_back(in.group);
    }
  }
  for (auto [i, k] : coords) {
    auto eval = [&](double delta) {
      std::vector<double> v(inputs[i].data().begin(), inputs[i].data().end());
      v[static_cast<std::size_t>(k)] += delta;
      auto args = inputs;
      args[i] = Tensor(inputs[i].shape(), std::move(v));
      return project(c.fn(args), r);
    };
    const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
    const double err = gradcheck_error(analytic[i][k], numeric);
    auto& g = groups[c.inputs[i].group];
    g.max_abs = std::max(g.max_abs, std::abs(analytic[i][k] - numeric));
    if (err >= g.worst) {
      g.worst = err;
      g.analytic = analytic[i][k];
      g.numeric = numeric;
    }
    ++g.checked;
  }
  GradcheckResult res;
  for (const auto& name : order) {
    res.groups.push_back(groups[name]);
    res.worst = std::max(res.worst, groups[name].worst);
  }
  res.pass = res.worst < c.tolerance;
  return res;
}

namespace {

using Inputs = std::vector<Tensor>;

GradcheckCase make_case(std::vector<GradcheckInput> inputs, std::function<Tensor(const Inputs&)> fn) {
  GradcheckCase c;
  c.inputs = std::move(inputs);
  c.fn = std::move(fn);
  return c;
}

AttentionWeights attention_weights(const Inputs& x, std::size_t first, bool offsets) {
  AttentionWeights w{x[first],     x[first + 1], x[first + 2], x[first + 3], x[first + 4], x[first + 5],
                     x[first + 6], x[first + 7], {},           {},           {},           {}};
  if (offsets) {
    w.offset_dw = x[first + 8];
    w.offset_dw_bias = x[first + 9];
    w.offset_pw = x[first + 10];
    w.offset_pw_bias = x[first + 11];
  }
  return w;
}

std::vector<GradcheckInput> attention_inputs(SplitMix64& rng, i64 df, i64 heads, bool offsets) {
  const i64 dk = df / heads;
  std::vector<GradcheckInput> in{
      {"query", random_tensor(rng, {df, df}, -0.5, 0.5)}, {"query", random_tensor(rng, {df}, -0.1, 0.1)},
      {"key", random_tensor(rng, {df, df}, -0.5, 0.5)},   {"key", random_tensor(rng, {df}, -0.1, 0.1)},
      {"value", random_tensor(rng, {df, df}, -0.5, 0.5)}, {"value", random_tensor(rng, {df}, -0.1, 0.1)},
      {"out", random_tensor(rng, {df, df}, -0.5, 0.5)},   {"out", random_tensor(rng, {df}, -0.1, 0.1)}};
  if (offsets) {
    in.push_back({"offset_net", random_tensor(rng, {df, 1, kOffsetKernel, kOffsetKernel}, -0.3, 0.3)});
    in.push_back({"offset_net", random_tensor(rng, {df}, -0.1, 0.1)});
    in.push_back({"offset_net", random_tensor(rng, {2 * heads, dk, 1, 1}, -1e-3, 1e-3)});
    in.push_back({"offset_net", fractional_tensor(rng, {2 * heads})});
  }
  return in;
}

GradcheckCase attention_case(std::uint64_t seed, AttentionKind kind, GridShape grid, i64 df, i64 heads,
                             i64 neighborhood, i64 window) {
  auto rng = SplitMix64(seed).split("attention");
  const bool offsets = kind == AttentionKind::kDmsa;
  auto in = attention_inputs(rng, df, heads, offsets);
  in.insert(in.begin(), {"f", random_tensor(rng, {grid.size(), df})});
  auto cfg = AttentionConfig::for_dim(df, heads, kind, neighborhood, window);
  return make_case(std::move(in), [cfg, grid, offsets](const Inputs& x) {
    return attend(x[0], attention_weights(x, 1, offsets), cfg, grid);
  });
}

std::vector<GradcheckOp> build_registry() {
  std::vector<GradcheckOp> ops;
  auto reg = [&](std::string module, std::string name, std::function<GradcheckCase(std::uint64_t)> make) {
    ops.push_back({std::move(module), std::move(name), std::move(make)});
  };

  // tensor-core
  reg("tensor-core", "matmul", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"a", random_tensor(rng, {2, 3, 4})}, {"b", random_tensor(rng, {4, 2})}},
                     [](const Inputs& x) { return matmul(x[0], x[1]); });
  });
  reg("tensor-core", "softmax", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"x", random_tensor(rng, {3, 5}, -2, 2)}}, [](const Inputs& x) { return softmax(x[0], 1); });
  });
  reg("tensor-core", "conv2d", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"input", random_tensor(rng, {2, 5, 5})},
                      {"weight", random_tensor(rng, {3, 2, 3, 3})},
                      {"bias", random_tensor(rng, {3})}},
                     [](const Inputs& x) { return conv2d(x[0], x[1], x[2], {2, 1, 1, 1}); });
  });
  reg("tensor-core", "conv2d_grouped", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"input", random_tensor(rng, {4, 5, 5})}, {"weight", random_tensor(rng, {4, 2, 3, 3})}},
                     [](const Inputs& x) { return conv2d(x[0], x[1], std::nullopt, {1, 1, 2, 2}); });
  });
  reg("tensor-core", "conv_transpose2d", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"input", random_tensor(rng, {3, 3, 4})},
                      {"weight", random_tensor(rng, {3, 2, 2, 2})},
                      {"bias", random_tensor(rng, {2})}},
                     [](const Inputs& x) { return conv_transpose2d(x[0], x[1], x[2], 2); });
  });
  reg("tensor-core", "layer_norm", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"x", random_tensor(rng, {4, 6}, -2, 2)},
                      {"gain", random_tensor(rng, {6})},
                      {"shift", random_tensor(rng, {6})}},
                     [](const Inputs& x) { return layer_norm(x[0], x[1], x[2]); });
  });
  reg("tensor-core", "gelu", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"x", random_tensor(rng, {10}, -3, 3)}}, [](const Inputs& x) { return gelu(x[0]); });
  });
  reg("tensor-core", "elementwise", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {4})}, {"c", random_tensor(rng, {3, 1}, 0.5, 2)}},
                     [](const Inputs& x) {
                       return div(scale(add(mul(x[0], x[1]), sub(x[0], x[1])), 1.5), add_scalar(x[2], 0.5));
                     });
  });
  reg("tensor-core", "shape_ops", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"a", random_tensor(rng, {2, 3, 4})}, {"b", random_tensor(rng, {2, 3, 2})}}, [](const Inputs& x) {
      auto c = concat({x[0], x[1]}, 2);
      auto p = permute(reshape(c, {6, 6}), {1, 0});
      return mul(slice(transpose(p), 0, 1, 4), gather_rows(p, {5, 0, 0, 3}));
    });
  });
  reg("tensor-core", "reductions", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"x", random_tensor(rng, {3, 4, 2})}}, [](const Inputs& x) {
      auto m = mean(x[0]);
      return add(mul(sum_axis(x[0], 1), sum_axis(x[0], 1)), m);
    });
  });
  reg("tensor-core", "nearest_downsample", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"x", random_tensor(rng, {2, 4, 6})}},
                     [](const Inputs& x) { return nearest_downsample(x[0], 2); });
  });
  reg("tensor-core", "composite", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"input", random_tensor(rng, {2, 5, 5})}, {"weight", random_tensor(rng, {3, 2, 3, 3})}},
                     [](const Inputs& x) {
                       auto y = conv2d(x[0], x[1], std::nullopt, {1, 0, 1, 1});
                       auto p = softmax(reshape(y, {3, 9}), 0);
                       return sum(mul(p, p));
                     });
  });

  // grid-sampling
  reg("grid-sampling", "sample2d", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"f", random_tensor(rng, {3, 6, 6})}, {"positions", fractional_tensor(rng, {2, 7, 2}, 5.0)}},
                     [](const Inputs& x) { return grid_sample(x[0], x[1]); });
  });
  reg("grid-sampling", "sample3d", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"f", random_tensor(rng, {2, 4, 5, 5})}, {"positions", fractional_tensor(rng, {6, 3}, 4.0)}},
                     [](const Inputs& x) { return grid_sample(x[0], x[1]); });
  });

  // deform-embed
  reg("deform-embed", "deform_conv2d", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"f", random_tensor(rng, {2, 8, 8})},
                      {"kernel", random_tensor(rng, {3, 2, 3, 3})},
                      {"offset_conv", random_tensor(rng, {18, 2, 3, 3}, -1e-3, 1e-3)},
                      {"offset_conv", fractional_tensor(rng, {18})}},
                     [](const Inputs& x) {
                       return deformable_conv2d(x[0], x[1], std::nullopt, x[2], x[3], {1, 1, 1, 1});
                     });
  });
  reg("deform-embed", "deform_conv2d_shared", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"f", random_tensor(rng, {2, 8, 8})},
                      {"kernel", random_tensor(rng, {4, 2, 3, 3})},
                      {"bias", random_tensor(rng, {4})},
                      {"offset_conv", random_tensor(rng, {2, 2, 3, 3}, -1e-3, 1e-3)},
                      {"offset_conv", fractional_tensor(rng, {2})}},
                     [](const Inputs& x) { return deformable_conv2d(x[0], x[1], x[2], x[3], x[4], {2, 1, 1, 1}); });
  });
  reg("deform-embed", "patch_embed_down", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"f", random_tensor(rng, {2, 6, 6})},
                      {"weight", random_tensor(rng, {4, 2, 3, 3})},
                      {"bias", random_tensor(rng, {4})},
                      {"norm", random_tensor(rng, {4})},
                      {"norm", random_tensor(rng, {4})}},
                     [](const Inputs& x) {
                       return layer_norm_map(conv2d(x[0], x[1], x[2], {2, 1, 1, 1}), x[3], x[4]);
                     });
  });
  reg("deform-embed", "patch_embed_first", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    return make_case({{"image", random_tensor(rng, {1, 8, 8})},
                      {"conv1", random_tensor(rng, {8, 1, 3, 3})},
                      {"conv1", random_tensor(rng, {8})},
                      {"conv1_offsets", random_tensor(rng, {18, 1, 3, 3}, -1e-4, 1e-4)},
                      {"conv1_offsets", fractional_tensor(rng, {18})},
                      {"conv2", random_tensor(rng, {16, 8, 3, 3})},
                      {"conv2", random_tensor(rng, {16})},
                      {"conv2_offsets", random_tensor(rng, {18, 8, 3, 3}, -1e-4, 1e-4)},
                      {"conv2_offsets", fractional_tensor(rng, {18})},
                      {"norm", random_tensor(rng, {8})},
                      {"norm", random_tensor(rng, {8})},
                      {"norm", random_tensor(rng, {16})},
                      {"norm", random_tensor(rng, {16})}},
                     [](const Inputs& x) {
                       auto y = deformable_conv2d(x[0], x[1], x[2], x[3], x[4], {2, 1, 1, 1});
                       y = layer_norm_map(y, x[9], x[10]);
                       y = deformable_conv2d(y, x[5], x[6], x[7], x[8], {2, 1, 1, 1});
                       return layer_norm_map(y, x[11], x[12]);
                     });
  });

  // attention
  reg("attention", "dmsa", [](std::uint64_t s) {
    return attention_case(s, AttentionKind::kDmsa, {4, 4}, 4, 2, 7, 4);
  });
  reg("attention", "nmsa", [](std::uint64_t s) {
    return attention_case(s, AttentionKind::kNmsa, {5, 4}, 4, 2, 3, 4);
  });
  reg("attention", "wmsa", [](std::uint64_t s) {
    return attention_case(s, AttentionKind::kWmsa, {4, 4}, 4, 2, 7, 2);
  });
  reg("attention", "full_attention", [](std::uint64_t s) {
    return attention_case(s, AttentionKind::kFull, {3, 3}, 4, 2, 7, 4);
  });
  reg("attention", "transformer_block", [](std::uint64_t s) {
    auto rng = SplitMix64(s).split("block");
    const i64 df = 8, heads = 2;
    const GridShape grid{4, 4};
    auto in = attention_inputs(rng, df, heads, true);
    in.insert(in.begin(), {"f", random_tensor(rng, {grid.size(), df})});
    in.push_back({"norm", random_tensor(rng, {df}, 0.5, 1.5)});
    in.push_back({"norm", random_tensor(rng, {df}, -0.2, 0.2)});
    in.push_back({"norm", random_tensor(rng, {df}, 0.3, 0.7)});
    in.push_back({"norm", random_tensor(rng, {df}, -0.2, 0.2)});
    in.push_back({"mlp", random_tensor(rng, {df, 4 * df}, -0.2, 0.2)});
    in.push_back({"mlp", random_tensor(rng, {4 * df}, -0.1, 0.1)});
    in.push_back({"mlp", random_tensor(rng, {4 * df, df}, -0.4, 0.4)});
    in.push_back({"mlp", random_tensor(rng, {df}, -0.1, 0.1)});
    const auto cfg = AttentionConfig::for_dim(df, heads, AttentionKind::kDmsa);
    return make_case(std::move(in), [cfg, grid](const Inputs& x) {
      auto h = layer_norm(x[0], x[13], x[14]);
      auto y = add(x[0], dmsa(h, attention_weights(x, 1, true), cfg, grid));
      auto m = add(matmul(gelu(add(matmul(layer_norm(y, x[15], x[16]), x[17]), x[18])), x[19]), x[20]);
      return add(y, m);
    });
  });

  // posenc
  reg("posenc", "ms_depe", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    const i64 c = 4;
    const GridShape grid{8, 8};
    std::vector<GradcheckInput> in{{"f", random_tensor(rng, {grid.size(), c})}};
    for (i64 k : {3, 5}) {
      const std::string b = "k" + std::to_string(k);
      in.push_back({b + ".kernel", random_tensor(rng, {c, 1, k, k})});
      in.push_back({b + ".kernel", random_tensor(rng, {c})});
      in.push_back({b + ".offset_conv", random_tensor(rng, {2, c, k, k}, -1e-3, 1e-3)});
      in.push_back({b + ".offset_conv", fractional_tensor(rng, {2})});
    }
    return make_case(std::move(in), [grid](const Inputs& x) {
      MsDepeWeights w{{x[1], x[2], x[3], x[4]}, {x[5], x[6], x[7], x[8]}};
      return ms_depe(x[0], w, grid);
    });
  });
  reg("posenc", "cpe", [](std::uint64_t s) {
    auto rng = SplitMix64(s);
    const GridShape grid{5, 6};
    return make_case({{"f", random_tensor(rng, {grid.size(), 3})},
                      {"kernel", random_tensor(rng, {3, 1, 3, 3})},
                      {"kernel", random_tensor(rng, {3})}},
                     [grid](const Inputs& x) { return cpe_baseline(x[0], x[1], x[2], grid); });
  });

  // train-eval
  auto random_label = [](SplitMix64& rng, i64 h, i64 w, i64 classes) {
    LabelMask m{h, w, {}};
    for (i64 i = 0; i < h * w; ++i) m.values.push_back(static_cast<std::int32_t>(rng.below(classes)));
    return m;
  };
  reg("train-eval", "dice_loss", [random_label](std::uint64_t s) {
    auto rng = SplitMix64(s);
    auto label = random_label(rng, 4, 4, 2);
    return make_case({{"logits", random_tensor(rng, {2, 4, 4}, -2, 2)}},
                     [label](const Inputs& x) { return dice_loss(x[0], label); });
  });
  reg("train-eval", "cross_entropy", [random_label](std::uint64_t s) {
    auto rng = SplitMix64(s);
    auto label = random_label(rng, 4, 4, 3);
    return make_case({{"logits", random_tensor(rng, {3, 4, 4}, -2, 2)}},
                     [label](const Inputs& x) { return cross_entropy(x[0], label); });
  });
  reg("train-eval", "combined_loss", [random_label](std::uint64_t s) {
    auto rng = SplitMix64(s);
    auto label = random_label(rng, 8, 8, 3);
    return make_case({{"logits", random_tensor(rng, {3, 8, 8}, -2, 2)},
                      {"aux", random_tensor(rng, {3, 4, 4}, -2, 2)},
                      {"aux", random_tensor(rng, {3, 2, 2}, -2, 2)}},
                     [label](const Inputs& x) { return combined_loss(x[0], {x[1], x[2]}, label, {0.6}); });
  });

  // network, end to end
  reg("network", "network", [random_label](std::uint64_t s) {
    auto rng = SplitMix64(s).split("network");
    auto net = Network::build(NetworkConfig::nano(), s);
    auto& p = net.params();
    // Move every offset branch off the zero-offset lattice so no sample sits
    // on a bilinear kink.
    for (ParamId id = 0; id < p.size(); ++id) {
      const auto& name = p.name(id);
      const bool offset_bias = name.ends_with("offset.bias") || name.ends_with("offset.pw_bias");
      const bool offset_weight = name.ends_with("offset.weight") || name.ends_with("offset.pw");
      if (offset_bias) {
        p.set(id, fractional_tensor(rng, p[id].shape()));
      } else if (offset_weight) {
        p.set(id, random_tensor(rng, p[id].shape(), -1e-4, 1e-4));
      } else if (name.ends_with("bias")) {
        // Nonzero biases keep layer-norm inputs away from zero variance.
        p.set(id, random_tensor(rng, p[id].shape(), -0.1, 0.1));
      }
    }
    const i64 size = net.config().input_multiple();
    auto label = random_label(rng, size, size, net.config().num_classes);
    std::vector<GradcheckInput> in{{"image", random_tensor(rng, {1, size, size}, 0, 1)}};
    for (ParamId id = 0; id < p.size(); ++id) {
      const auto& name = p.name(id);
      in.push_back({name.substr(0, name.find('.')), p[id]});
    }
    auto c = make_case(std::move(in), [net, label](const Inputs& x) mutable {
      for (ParamId id = 0; id < net.params().size(); ++id) net.params().set(id, x[id + 1]);
      const auto out = net.forward(x[0]);
      return combined_loss(out.logits, out.aux_logits, label, {0.6});
    });
    c.tolerance = 1e-3;
    c.coord_budget = 60;
    return c;
  });
  return ops;
}

}  // namespace

const std::vector<GradcheckOp>& gradcheck_registry() {
  static const std::vector<GradcheckOp> ops = build_registry();
  return ops;
}

const GradcheckOp* find_gradcheck_op(const std::string& name) {
  for (const auto& op : gradcheck_registry()) {
    if (op.name == name) return &op;
  }
  return nullptr;
}

}  // namespace agile
