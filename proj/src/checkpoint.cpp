#include "agile/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "agile/error.hpp"

namespace agile {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out = "AGFK";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw ContractError("checkpoint: tensor name too long: " + name.substr(0, 32));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.ptr()), static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != "AGFK") throw FormatError("bad magic, expected AGFK", 0);
  const auto version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    auto name = r.take(len, "name");
    const auto dtype_at = r.pos();
    if (r.get<std::uint8_t>("dtype") != 0) throw FormatError("unsupported dtype for tensor " + name, dtype_at);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (int k = 0; k < rank; ++k) {
      const auto dim_at = r.pos();
      const auto d = r.get<std::uint32_t>("dims");
      if (d == 0) throw FormatError("zero dimension in tensor " + name, dim_at);
      shape.push_back(d);
    }
    const auto n = static_cast<std::size_t>(numel_of(shape));
    const auto raw = r.take(n * sizeof(double), "payload");
    std::vector<double> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.pos());
  return out;
}

void save_checkpoint(const std::string& path, const ParameterStore& params) {
  NamedTensors named;
  for (ParamId id = 0; id < params.size(); ++id) named.emplace_back(params.name(id), params[id]);
  std::ofstream f(path, std::ios::binary);
  const auto bytes = encode_checkpoint(named);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
}

NamedTensors read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

void load_into(ParameterStore& params, const NamedTensors& tensors) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (ParamId id = 0; id < params.size(); ++id) {
    const auto it = by_name.find(params.name(id));
    if (it == by_name.end()) throw ConfigError("checkpoint lacks tensor " + params.name(id));
    if (it->second->shape() != params[id].shape()) {
      throw ConfigError("checkpoint tensor " + params.name(id) + " has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(params[id].shape()));
    }
  }
  if (tensors.size() != params.size()) {
    for (const auto& [name, t] : tensors) {
      if (!params.find(name)) throw ConfigError("checkpoint tensor " + name + " does not exist in the model");
    }
  }
  for (ParamId id = 0; id < params.size(); ++id) params.set(id, *by_name.at(params.name(id)));
}

}  // namespace agile
