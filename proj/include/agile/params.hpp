#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "agile/rng.hpp"
#include "agile/tensor.hpp"

namespace agile {

using ParamId = std::size_t;

/// Named, ordered collection of trainable tensors. Layers keep ParamIds and
/// read current values at forward time; the optimizer swaps values in place.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value);
  const Tensor& operator[](ParamId id) const { return values_.at(id); }
  void set(ParamId id, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  std::optional<ParamId> find(std::string_view name) const;
  std::int64_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, ParamId> by_name_;
};

/// Parameter initializers. Each draws from `root` split by the parameter
/// name, so a tensor's initial values depend only on (seed, name, shape).
namespace init {
// Normal(0, stddev) truncated to +-2 stddev by redrawing.
Tensor trunc_normal(Shape shape, const SplitMix64& root, std::string_view name, double stddev = 0.02);
Tensor uniform(Shape shape, const SplitMix64& root, std::string_view name, double lo, double hi);
}  // namespace init

}  // namespace agile
