#include "agile/network.hpp"

#include "agile/error.hpp"
#include "agile/ops.hpp"

namespace agile {

using i64 = std::int64_t;

namespace {

std::string field(const char* name, std::size_t i) { return std::string(name) + "[" + std::to_string(i) + "]"; }

}  // namespace

void NetworkConfig::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (embed_dims[i] < 1) throw ConfigError("embed_dims: " + field("embed_dims", i) + " must be positive");
    if (i > 0 && embed_dims[i] != 2 * embed_dims[i - 1]) {
      throw ConfigError("embed_dims: must double between stages, " + field("embed_dims", i) + "=" +
                        std::to_string(embed_dims[i]) + " after " + std::to_string(embed_dims[i - 1]));
    }
    if (heads[i] < 1 || embed_dims[i] % heads[i]) {
      throw ConfigError("heads: " + field("heads", i) + "=" + std::to_string(heads[i]) + " must divide " +
                        field("embed_dims", i) + "=" + std::to_string(embed_dims[i]));
    }
    if (depths[i] < 0) throw ConfigError("depths: " + field("depths", i) + " must be >= 0");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (decoder_depths[i] < 0) throw ConfigError("decoder_depths: " + field("decoder_depths", i) + " must be >= 0");
  }
  if (embed_dims[0] % 2) throw ConfigError("embed_dims: embed_dims[0] must be even");
  if (neighborhood < 1 || neighborhood % 2 == 0) throw ConfigError("neighborhood: must be odd and >= 1");
  if (window < 1) throw ConfigError("window: must be >= 1");
  if (patch_size < 2 || patch_size % 2) throw ConfigError("patch_size: must be even and >= 2");
  if (in_channels < 1) throw ConfigError("in_channels: must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
}

NetworkConfig NetworkConfig::nano() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig c;
  c.variant = "tiny";
  c.embed_dims = {64, 128, 256, 512};
  c.heads = {2, 4, 8, 16};
  c.depths = {2, 4, 10, 2};
  c.decoder_depths = {10, 4, 2};
  c.num_classes = 9;
  return c;
}

NetworkConfig NetworkConfig::base() {
  NetworkConfig c = tiny();
  c.variant = "base";
  c.embed_dims = {128, 256, 512, 1024};
  c.heads = {4, 8, 16, 32};
  return c;
}

NetworkConfig NetworkConfig::preset(const std::string& name) {
  if (name == "nano") return nano();
  if (name == "tiny") return tiny();
  if (name == "base") return base();
  throw ConfigError("variant: unknown preset '" + name + "' (expected nano, tiny or base)");
}

Network Network::build(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network net;
  net.cfg_ = cfg;
  auto& p = net.params_;
  const SplitMix64 rng(seed);
  const auto& d = cfg.embed_dims;

  auto make_stage = [&](const std::string& prefix, std::size_t level, i64 depth) {
    Stage s;
    s.posenc = PosEncLayer::create(p, rng, prefix + ".posenc", d[level], cfg.posenc);
    for (i64 b = 0; b < depth; ++b) {
      const auto kind = alternating_kind(b, cfg.even_attention, cfg.odd_attention);
      const auto acfg = AttentionConfig::for_dim(d[level], cfg.heads[level], kind, cfg.neighborhood, cfg.window);
      s.blocks.push_back(
          TransformerBlock::create(p, rng, prefix + ".block" + std::to_string(b), d[level], acfg));
    }
    return s;
  };
  auto weight = [&](const std::string& n, Shape s) { return p.add(n, init::trunc_normal(std::move(s), rng, n)); };
  auto zeros = [&](const std::string& n, Shape s) { return p.add(n, Tensor::zeros(std::move(s))); };

  net.embed_ = PatchEmbedFirst::create(p, rng, "embed", cfg.in_channels, d[0], cfg.patch_size,
                                       cfg.deformable_embedding, cfg.shared_offsets);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string prefix = "encoder" + std::to_string(i);
    if (i > 0) net.downs_[i - 1] = PatchEmbedDown::create(p, rng, prefix + ".down", d[i - 1]);
    net.encoder_[i] = make_stage(prefix, i, cfg.depths[i]);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const std::size_t level = 2 - j;
    const std::string prefix = "decoder" + std::to_string(j);
    auto& ds = net.decoder_[j];
    ds.up_weight = weight(prefix + ".up.weight", {d[level + 1], d[level], 2, 2});
    ds.up_bias = zeros(prefix + ".up.bias", {d[level]});
    ds.fuse_weight = weight(prefix + ".fuse.weight", {2 * d[level], d[level]});
    ds.fuse_bias = zeros(prefix + ".fuse.bias", {d[level]});
    ds.stage = make_stage(prefix, level, cfg.decoder_depths[j]);
    if (cfg.deep_supervision) {
      ds.aux_weight = weight(prefix + ".aux.weight", {cfg.num_classes, d[level], 1, 1});
      ds.aux_bias = zeros(prefix + ".aux.bias", {cfg.num_classes});
    }
  }
  const i64 s = cfg.patch_size / 2;
  net.head_up1_ = weight("head.up1.weight", {d[0], d[0], s, s});
  net.head_up1_bias_ = zeros("head.up1.bias", {d[0]});
  net.head_up2_ = weight("head.up2.weight", {d[0], d[0], s, s});
  net.head_up2_bias_ = zeros("head.up2.bias", {d[0]});
  net.head_weight_ = weight("head.out.weight", {cfg.num_classes, d[0], 1, 1});
  net.head_bias_ = zeros("head.out.bias", {cfg.num_classes});
  return net;
}

Tensor Network::run_stage(const Stage& s, const Tensor& map) const {
  const GridShape grid{map.dim(1), map.dim(2)};
  auto x = s.posenc.forward(params_, map_to_tokens(map), grid);
  for (const auto& b : s.blocks) x = b.forward(params_, x, grid);
  return tokens_to_map(x, grid.height, grid.width);
}

std::vector<Tensor> Network::encode(const Tensor& image) const {
  const i64 m = cfg_.input_multiple();
  if (image.rank() != 3 || image.dim(0) != cfg_.in_channels || image.dim(1) % m || image.dim(2) % m) {
    throw DimensionError("network input " + shape_str(image.shape()) + ": expected " +
                         std::to_string(cfg_.in_channels) + " channels and spatial extents that are multiples of " +
                         std::to_string(m));
  }
  std::vector<Tensor> feats;
  auto x = embed_.forward(params_, image);
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) x = downs_[i - 1].forward(params_, x);
    x = run_stage(encoder_[i], x);
    feats.push_back(x);
  }
  return feats;
}

NetworkOutput Network::forward(const Tensor& image) const {
  const auto feats = encode(image);
  NetworkOutput out;
  auto x = feats[3];
  for (std::size_t j = 0; j < 3; ++j) {
    const auto& ds = decoder_[j];
    const auto& skip = feats[2 - j];
    auto up = conv_transpose2d(x, params_[ds.up_weight], params_[ds.up_bias], 2);
    auto fused = add(matmul(concat({map_to_tokens(up), map_to_tokens(skip)}, 1), params_[ds.fuse_weight]),
                     params_[ds.fuse_bias]);
    x = run_stage(ds.stage, tokens_to_map(fused, skip.dim(1), skip.dim(2)));
    if (cfg_.deep_supervision) {
      out.aux_logits.insert(out.aux_logits.begin(),
                            conv2d(x, params_[ds.aux_weight], params_[ds.aux_bias], {}));
    }
  }
  const i64 s = cfg_.patch_size / 2;
  auto y = gelu(conv_transpose2d(x, params_[head_up1_], params_[head_up1_bias_], s));
  y = gelu(conv_transpose2d(y, params_[head_up2_], params_[head_up2_bias_], s));
  out.logits = conv2d(y, params_[head_weight_], params_[head_bias_], {});
  return out;
}

std::int64_t param_count(const Network& net) { return net.param_count(); }

}  // namespace agile
