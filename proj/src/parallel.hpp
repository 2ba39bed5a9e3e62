#pragma once

#include <cstddef>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace voxreg::detail {

/// Runs fn(i) for i in [0, n). Iterations must be independent; results may
/// not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
    fn(static_cast<std::size_t>(i));
#else
  for (std::size_t i = 0; i < n; ++i) fn(i);
#endif
}

}  // namespace voxreg::detail
