#pragma once

#include <cstddef>

namespace pmlds {

/// Selects between the OpenMP kernels and the serial reference
/// implementations kept for cross-checking.
enum class Exec { serial, parallel };

/// Caps OpenMP parallelism; n <= 0 restores the runtime default.
void set_threads(int n);
int max_threads();

/// Runs f(i) for i in [0, n). With Exec::parallel the loop is distributed
/// over OpenMP threads with a static schedule; f must only write to
/// index-private data.
template <class F>
void for_each_index(Exec exec, std::ptrdiff_t n, F&& f)
{
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            f(i);
        }
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            f(i);
        }
    }
}

}  // namespace pmlds
