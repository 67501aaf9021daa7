#include "agile/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "agile/error.hpp"

namespace agile {

using i64 = std::int64_t;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Entry {
  int line = 0;
  std::string key;
  std::string value;
};

[[noreturn]] void fail(const Entry& e, const std::string& msg) {
  throw ConfigError("line " + std::to_string(e.line) + ": key '" + e.key + "': " + msg);
}

i64 to_int(const Entry& e, const std::string& s) {
  i64 v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) fail(e, "invalid integer '" + s + "'");
  return v;
}

std::uint64_t to_u64(const Entry& e, const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) fail(e, "invalid unsigned integer '" + s + "'");
  return v;
}

double to_double(const Entry& e, const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) fail(e, "invalid number '" + s + "'");
  return v;
}

bool to_bool(const Entry& e, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(e, "expected true or false, got '" + s + "'");
}

std::vector<std::string> to_list(const std::string& raw) {
  std::string s = raw;
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <std::size_t N>
std::array<i64, N> to_array(const Entry& e) {
  const auto items = to_list(e.value);
  if (items.size() != N) fail(e, "expected " + std::to_string(N) + " values, got " + std::to_string(items.size()));
  std::array<i64, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_int(e, items[i]);
  return out;
}

template <typename F>
auto checked(const Entry& e, F&& f) {
  try {
    return f();
  } catch (const ConfigError& err) {
    fail(e, err.what());
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename C>
std::string join(const C& items) {
  std::string out;
  for (const auto& x : items) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::string>) {
      out += x;
    } else {
      out += std::to_string(x);
    }
  }
  return out;
}

}  // namespace

std::pair<AttentionKind, AttentionKind> parse_attention_pair(const std::string& s) {
  const auto plus = s.find('+');
  if (plus == std::string::npos) {
    const auto k = parse_attention_kind(s);
    return {k, k};
  }
  return {parse_attention_kind(trim(s.substr(0, plus))), parse_attention_kind(trim(s.substr(plus + 1)))};
}

std::string attention_pair_name(AttentionKind even, AttentionKind odd) { return to_string(even) + "+" + to_string(odd); }

void RunConfig::validate() const {
  model.validate();
  train.validate();
  const i64 m = model.input_multiple();
  if (data.image_size < m || data.image_size % m) {
    throw ConfigError("image_size: " + std::to_string(data.image_size) + " must be a positive multiple of " +
                      std::to_string(m));
  }
  if (data.train_count < 1) throw ConfigError("train_count: must be >= 1");
  if (data.test_count < 1) throw ConfigError("test_count: must be >= 1");
  if (ablation.seeds < 1) throw ConfigError("seeds: must be >= 1");
  for (const auto& a : ablation.attention) parse_attention_pair(a);
  for (const auto& p : ablation.posenc) parse_posenc_kind(p);
  for (const auto& e : ablation.embedding) {
    if (e != "deformable" && e != "rigid") throw ConfigError("embedding: expected deformable or rigid, got " + e);
  }
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, std::vector<Entry>> sections;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "data" && section != "train" && section != "ablation") {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    Entry e{line_no, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (section.empty()) fail(e, "appears before any [section]");
    for (const auto& prev : sections[section]) {
      if (prev.key == e.key) fail(e, "duplicate key in [" + section + "]");
    }
    sections[section].push_back(std::move(e));
  }

  RunConfig cfg;
  std::optional<std::pair<Entry, i64>> model_classes, data_classes;

  auto& model = sections["model"];
  for (const auto& e : model) {
    if (e.key == "variant") cfg.model = checked(e, [&] { return NetworkConfig::preset(e.value); });
  }
  for (const auto& e : model) {
    auto& m = cfg.model;
    if (e.key == "variant") continue;
    if (e.key == "embed_dims") m.embed_dims = to_array<4>(e);
    else if (e.key == "heads") m.heads = to_array<4>(e);
    else if (e.key == "depths") m.depths = to_array<4>(e);
    else if (e.key == "decoder_depths") m.decoder_depths = to_array<3>(e);
    else if (e.key == "neighborhood") m.neighborhood = to_int(e, e.value);
    else if (e.key == "window") m.window = to_int(e, e.value);
    else if (e.key == "patch_size") m.patch_size = to_int(e, e.value);
    else if (e.key == "in_channels") m.in_channels = to_int(e, e.value);
    else if (e.key == "num_classes") model_classes = {e, to_int(e, e.value)};
    else if (e.key == "deep_supervision") m.deep_supervision = to_bool(e, e.value);
    else if (e.key == "attention") std::tie(m.even_attention, m.odd_attention) = checked(e, [&] { return parse_attention_pair(e.value); });
    else if (e.key == "posenc") m.posenc = checked(e, [&] { return parse_posenc_kind(e.value); });
    else if (e.key == "embedding") {
      if (e.value != "deformable" && e.value != "rigid") fail(e, "expected deformable or rigid");
      m.deformable_embedding = e.value == "deformable";
    } else if (e.key == "offsets") {
      if (e.value != "per_tap" && e.value != "shared") fail(e, "expected per_tap or shared");
      m.shared_offsets = e.value == "shared";
    } else {
      fail(e, "unknown key in [model]");
    }
  }
  for (const auto& e : sections["data"]) {
    auto& d = cfg.data;
    if (e.key == "image_size") d.image_size = to_int(e, e.value);
    else if (e.key == "num_classes") data_classes = {e, to_int(e, e.value)};
    else if (e.key == "train_count") d.train_count = to_int(e, e.value);
    else if (e.key == "test_count") d.test_count = to_int(e, e.value);
    else if (e.key == "seed") d.seed = to_u64(e, e.value);
    else fail(e, "unknown key in [data]");
  }
  for (const auto& e : sections["train"]) {
    auto& t = cfg.train;
    if (e.key == "lr") t.lr = to_double(e, e.value);
    else if (e.key == "steps") t.steps = to_int(e, e.value);
    else if (e.key == "batch") t.batch = to_int(e, e.value);
    else if (e.key == "lambda") t.loss.lambda = to_double(e, e.value);
    else if (e.key == "seed") t.seed = to_u64(e, e.value);
    else if (e.key == "log_every") t.log_every = to_int(e, e.value);
    else fail(e, "unknown key in [train]");
  }
  for (const auto& e : sections["ablation"]) {
    auto& a = cfg.ablation;
    if (e.key == "attention") a.attention = to_list(e.value);
    else if (e.key == "posenc") a.posenc = to_list(e.value);
    else if (e.key == "embedding") a.embedding = to_list(e.value);
    else if (e.key == "seeds") a.seeds = to_int(e, e.value);
    else fail(e, "unknown key in [ablation]");
  }
  if (model_classes && data_classes && model_classes->second != data_classes->second) {
    fail(data_classes->first, "num_classes " + std::to_string(data_classes->second) + " disagrees with [model] value " +
                                  std::to_string(model_classes->second));
  }
  if (model_classes) cfg.model.num_classes = model_classes->second;
  if (data_classes) cfg.model.num_classes = data_classes->second;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string write_config(const RunConfig& c) {
  const auto& m = c.model;
  std::ostringstream o;
  o << "[model]\n"
    << "variant = " << m.variant << "\n"
    << "embed_dims = " << join(m.embed_dims) << "\n"
    << "heads = " << join(m.heads) << "\n"
    << "depths = " << join(m.depths) << "\n"
    << "decoder_depths = " << join(m.decoder_depths) << "\n"
    << "neighborhood = " << m.neighborhood << "\n"
    << "window = " << m.window << "\n"
    << "patch_size = " << m.patch_size << "\n"
    << "in_channels = " << m.in_channels << "\n"
    << "num_classes = " << m.num_classes << "\n"
    << "deep_supervision = " << (m.deep_supervision ? "true" : "false") << "\n"
    << "attention = " << attention_pair_name(m.even_attention, m.odd_attention) << "\n"
    << "posenc = " << to_string(m.posenc) << "\n"
    << "embedding = " << (m.deformable_embedding ? "deformable" : "rigid") << "\n"
    << "offsets = " << (m.shared_offsets ? "shared" : "per_tap") << "\n\n"
    << "[data]\n"
    << "image_size = " << c.data.image_size << "\n"
    << "num_classes = " << m.num_classes << "\n"
    << "train_count = " << c.data.train_count << "\n"
    << "test_count = " << c.data.test_count << "\n"
    << "seed = " << c.data.seed << "\n\n"
    << "[train]\n"
    << "lr = " << fmt_double(c.train.lr) << "\n"
    << "steps = " << c.train.steps << "\n"
    << "batch = " << c.train.batch << "\n"
    << "lambda = " << fmt_double(c.train.loss.lambda) << "\n"
    << "seed = " << c.train.seed << "\n"
    << "log_every = " << c.train.log_every << "\n\n"
    << "[ablation]\n"
    << "attention = " << join(c.ablation.attention) << "\n"
    << "posenc = " << join(c.ablation.posenc) << "\n"
    << "embedding = " << join(c.ablation.embedding) << "\n"
    << "seeds = " << c.ablation.seeds << "\n";
  return o.str();
}

const std::vector<std::string>& ablation_variants(const RunConfig& cfg, const std::string& axis) {
  if (axis == "attention") return cfg.ablation.attention;
  if (axis == "posenc") return cfg.ablation.posenc;
  if (axis == "embedding") return cfg.ablation.embedding;
  throw ConfigError("unknown ablation axis '" + axis + "' (expected attention, posenc or embedding)");
}

RunConfig with_variant(const RunConfig& cfg, const std::string& axis, const std::string& variant) {
  RunConfig out = cfg;
  if (axis == "attention") {
    std::tie(out.model.even_attention, out.model.odd_attention) = parse_attention_pair(variant);
  } else if (axis == "posenc") {
    out.model.posenc = parse_posenc_kind(variant);
  } else if (axis == "embedding") {
    if (variant != "deformable" && variant != "rigid") throw ConfigError("embedding: unknown variant " + variant);
    out.model.deformable_embedding = variant == "deformable";
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (expected attention, posenc or embedding)");
  }
  return out;
}

}  // namespace agile
