#include "pmlds/membership.hpp"

#include <algorithm>
#include <cmath>

namespace pmlds {

Weights to_simplex(const Eigen::Ref<const Vector>& zhat)
{
    const auto m = zhat.size();
    if (m == 0) {
        throw InvalidArgument("to_simplex: empty membership driver");
    }
    if (!zhat.allFinite()) {
        throw InvalidArgument("to_simplex: non-finite membership driver");
    }
    // Multiply numerator and denominator by e^{-c}; the constants scale too.
    const double c = std::max(zhat.maxCoeff(), 0.0);
    const double offset = std::exp(-c) / static_cast<double>(m);
    Weights w{Vector(m)};
    double denom = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        w.z[i] = std::exp(zhat[i] - c) + offset;
        denom += w.z[i];
    }
    w.z /= denom;
    return w;
}

}  // namespace pmlds
