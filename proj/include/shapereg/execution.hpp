#pragma once

#include <cstddef>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace shapereg {

// Selects the serial reference loop or the OpenMP loop for per-face and
// per-vertex kernels. Both produce bit-identical results: parallel loops only
// write to disjoint slots and every reduction runs afterwards in fixed order.
enum class Execution { serial, parallel };

template <class Fn>
void for_each_index(Execution exec, std::size_t count, Fn&& fn) {
    const auto n = static_cast<std::int64_t>(count);
    if (exec == Execution::parallel) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
    } else {
        for (std::int64_t i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
    }
}

inline int max_workers() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_workers(int workers) {
#ifdef _OPENMP
    if (workers > 0) omp_set_num_threads(workers);
#else
    (void)workers;
#endif
}

} // namespace shapereg
