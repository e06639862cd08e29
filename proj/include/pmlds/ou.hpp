#pragma once

#include "pmlds/core.hpp"
#include "pmlds/random.hpp"

namespace pmlds::ou {

/// Stationary law N(q, S / (2b)).
Gaussian stationary(const OuParams& params);

/// Exact transition density over delta_t:
///   mean = x_prev - (1 - e^{-b dt}) (x_prev - q)
///   cov  = (1 - e^{-2 b dt}) / (2b) * S
Gaussian transition(const OuParams& params, const Vector& x_prev, double delta_t);

/// Draw from transition() using the symmetric square root of the covariance.
Vector sample_transition(const OuParams& params, const Vector& x_prev, double delta_t, RandomStream& rng);

double log_transition_density(const OuParams& params, const Vector& x_prev, const Vector& x_next,
                              double delta_t);

/// 1 - e^{-b dt}, accurate for small b dt.
double decay_complement(double b, double delta_t);

/// (1 - e^{-2 b dt}) / (2b), the scalar factor of the transition covariance.
double transition_scale(double b, double delta_t);

/// Precomputed transition for a fixed (params, delta_t); used in the hot loops
/// where the same kernel is applied to many particles.
class Propagator {
public:
    Propagator(const OuParams& params, double delta_t);

    [[nodiscard]] Vector mean(const Eigen::Ref<const Vector>& x_prev) const;
    [[nodiscard]] const Matrix& cov() const { return cov_; }
    /// Symmetric square root of cov().
    [[nodiscard]] const Matrix& cov_sqrt() const { return sqrt_; }
    [[nodiscard]] Vector sample(const Eigen::Ref<const Vector>& x_prev, RandomStream& rng) const;
    /// Requires a PD covariance.
    [[nodiscard]] double log_density(const Eigen::Ref<const Vector>& x_prev,
                                     const Eigen::Ref<const Vector>& x_next) const;
    /// L^{-1} v with cov = L L^T; requires a PD covariance.
    [[nodiscard]] Vector whiten(const Eigen::Ref<const Vector>& v) const;
    [[nodiscard]] double log_det() const;
    [[nodiscard]] int dim() const { return static_cast<int>(q_.size()); }

private:
    void require_factor() const;

    double retain_;  // e^{-b dt}
    Vector q_;
    Matrix cov_;
    Matrix sqrt_;
    Eigen::LLT<Matrix> llt_;
    bool pd_ = false;
};

}  // namespace pmlds::ou
