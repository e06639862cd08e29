#include "pmlds/parallel.hpp"

#include <omp.h>

namespace pmlds {

void set_threads(int n)
{
    static const int runtime_default = omp_get_max_threads();
    omp_set_num_threads(n > 0 ? n : runtime_default);
}

int max_threads()
{
    return omp_get_max_threads();
}

}  // namespace pmlds
