#pragma once

namespace agile {

/// Applies AGILE_THREADS (a positive integer) to the OpenMP runtime and
/// returns the thread count in effect. Unset or invalid leaves the default.
int configure_threads();
void set_threads(int n);
int max_threads();

}  // namespace agile
