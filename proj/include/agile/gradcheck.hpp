#pragma once

// Central-difference gradient checking.
//
// A case maps inputs to an output tensor y; the checked scalar is
// sum(y * R) for a fixed random R, so every output element contributes with
// its own weight.

#include <functional>
#include <string>
#include <vector>

#include "agile/tensor.hpp"

namespace agile {

struct GradcheckInput {
  std::string group;
  Tensor value;
};

struct GradcheckCase {
  std::vector<GradcheckInput> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  double tolerance = 1e-4;
  // Coordinates checked per trial, drawn uniformly over (input, element);
  // 0 checks every element of every input.
  std::int64_t coord_budget = 0;
};

struct GroupResult {
  std::string group;
  double worst = 0.0;
  double max_abs = 0.0;  // largest |analytic - numeric|
  std::int64_t checked = 0;
  // Values at the worst coordinate.
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradcheckResult {
  std::vector<GroupResult> groups;
  double worst = 0.0;
  bool pass = true;
};

inline constexpr double kGradcheckStep = 1e-3;
inline constexpr double kGradcheckFloor = 1e-6;

/// 0 when |a - n| <= floor, else |a - n| / max(|a|, |n|).
double gradcheck_error(double analytic, double numeric, double floor = kGradcheckFloor);

GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed, double h = kGradcheckStep);

struct GradcheckOp {
  std::string module;
  std::string name;
  std::function<GradcheckCase(std::uint64_t seed)> make;
};

/// Every differentiable op with a randomized case builder.
const std::vector<GradcheckOp>& gradcheck_registry();
const GradcheckOp* find_gradcheck_op(const std::string& name);

}  // namespace agile
