#pragma once

#include "pmlds/core.hpp"

namespace pmlds {

/// Simplex weights over the M experts.
struct Weights {
    Vector z;
};

/// Logistic-normal map
///   z_m = (e^{zhat_m} + 1/M) / (sum_n e^{zhat_n} + 1).
/// The map is not shift invariant, so overflow is avoided by scaling every
/// term, the constants included, by e^{-max(zhat, 0)}.
Weights to_simplex(const Eigen::Ref<const Vector>& zhat);

}  // namespace pmlds
