#include "agile/params.hpp"

#include <cmath>

#include "agile/error.hpp"

namespace agile {

ParamId ParameterStore::add(std::string name, Tensor value) {
  if (by_name_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  const ParamId id = values_.size();
  by_name_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(value.with_grad());
  return id;
}

void ParameterStore::set(ParamId id, Tensor value) {
  if (value.shape() != values_.at(id).shape()) {
    throw DimensionError("parameter '" + names_.at(id) + "' has shape " + shape_str(values_.at(id).shape()) +
                         ", got " + shape_str(value.shape()));
  }
  values_[id] = value.with_grad();
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::int64_t ParameterStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

namespace init {

Tensor trunc_normal(Shape shape, const SplitMix64& root, std::string_view name, double stddev) {
  auto rng = root.split(name);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) {
    double z;
    do {
      z = rng.normal();
    } while (std::fabs(z) > 2.0);
    x = z * stddev;
  }
  return Tensor(std::move(shape), std::move(v));
}

Tensor uniform(Shape shape, const SplitMix64& root, std::string_view name, double lo, double hi) {
  auto rng = root.split(name);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace init

}  // namespace agile
