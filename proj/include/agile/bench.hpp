#pragma once

#include <functional>
#include <string>
#include <vector>

#include "agile/attention.hpp"

namespace agile {

/// Median wall time in microseconds over `runs` calls (after one warm-up).
double median_micros(const std::function<void()>& fn, int runs = 5);

/// "HxW" or a token count L (factored into the most square H x W).
GridShape parse_grid_size(const std::string& token);
std::vector<GridShape> parse_grid_sizes(const std::string& list);

struct BenchRow {
  std::string variant;
  std::int64_t length = 0;
  double micros = 0.0;
};

std::string bench_csv(const std::vector<BenchRow>& rows);

/// Ops: "attention" (variants nmsa, wmsa, full), "deform_conv" and
/// "grid_sample" (variants reference, parallel). One row per variant and
/// size, variants in that order for each size.
std::vector<BenchRow> run_bench(const std::string& op, const std::vector<GridShape>& sizes, std::uint64_t seed,
                                int runs = 5);
const std::vector<std::string>& bench_ops();

}  // namespace agile
