#include "agile/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace agile {

int configure_threads() {
  if (const char* env = std::getenv("AGILE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) set_threads(n);
    } catch (const std::exception&) {
    }
  }
  return max_threads();
}

void set_threads(int n) { omp_set_num_threads(n); }

int max_threads() { return omp_get_max_threads(); }

}  // namespace agile
