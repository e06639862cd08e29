#pragma once

#include "pmlds/core.hpp"
#include "pmlds/membership.hpp"
#include "pmlds/random.hpp"

namespace pmlds::emission {

struct Observation {
    Vector y;
    long t_index = 0;
};

/// W_t = [z_1 P^(1), ..., z_M P^(M)], a d x (M K) matrix.
Matrix assemble_w(const Weights& z, const std::vector<Matrix>& P);

/// sum_m z_m P^(m) x^(m) without forming W.
Vector mean(const Weights& z, const std::vector<Matrix>& P, const Vector& X);

/// Gaussian log-density of y under N(W_t X_t, diag(sigma2)), O(d M K).
double log_likelihood(const Vector& y, const LatentState& state, const StaticParams& statics);

/// W_t X_t plus independent N(0, sigma2_j) noise.
Vector sample_observation(const LatentState& state, const StaticParams& statics, RandomStream& rng);

}  // namespace pmlds::emission
