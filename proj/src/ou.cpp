#include "pmlds/ou.hpp"

#include <cmath>
#include <numbers>

#include "pmlds/linalg.hpp"

namespace pmlds::ou {

double decay_complement(double b, double delta_t)
{
    return -std::expm1(-b * delta_t);
}

double transition_scale(double b, double delta_t)
{
    return -std::expm1(-2.0 * b * delta_t) / (2.0 * b);
}

Gaussian stationary(const OuParams& params)
{
    return {params.q(), params.S() / (2.0 * params.b())};
}

Gaussian transition(const OuParams& params, const Vector& x_prev, double delta_t)
{
    if (!(delta_t > 0.0)) {
        throw InvalidArgument("transition: delta_t must be positive");
    }
    if (x_prev.size() != params.dim()) {
        throw InvalidArgument("transition: state dimension does not match the parameters");
    }
    const double beta = decay_complement(params.b(), delta_t);
    return {x_prev - beta * (x_prev - params.q()), transition_scale(params.b(), delta_t) * params.S()};
}

Vector sample_transition(const OuParams& params, const Vector& x_prev, double delta_t, RandomStream& rng)
{
    const Gaussian g = transition(params, x_prev, delta_t);
    const Matrix root = linalg::sym_sqrt(g.cov);
    return g.mean + root * rng.normal_vector(g.mean.size());
}

double log_transition_density(const OuParams& params, const Vector& x_prev, const Vector& x_next, double delta_t)
{
    const Gaussian g = transition(params, x_prev, delta_t);
    return linalg::gaussian_log_pdf(x_next, g.mean, g.cov);
}

Propagator::Propagator(const OuParams& params, double delta_t)
    : retain_(std::exp(-params.b() * delta_t)),
      q_(params.q()),
      cov_(transition_scale(params.b(), delta_t) * params.S()),
      sqrt_(linalg::sym_sqrt(cov_)),
      llt_(cov_)
{
    if (!(delta_t > 0.0)) {
        throw InvalidArgument("propagator: delta_t must be positive");
    }
    pd_ = llt_.info() == Eigen::Success && (llt_.matrixLLT().diagonal().array() > 0.0).all();
}

Vector Propagator::mean(const Eigen::Ref<const Vector>& x_prev) const
{
    return q_ + retain_ * (x_prev - q_);
}

Vector Propagator::sample(const Eigen::Ref<const Vector>& x_prev, RandomStream& rng) const
{
    return mean(x_prev) + sqrt_ * rng.normal_vector(q_.size());
}

void Propagator::require_factor() const
{
    if (!pd_) {
        throw NumericalError("transition covariance is not positive-definite");
    }
}

double Propagator::log_density(const Eigen::Ref<const Vector>& x_prev, const Eigen::Ref<const Vector>& x_next) const
{
    require_factor();
    const Vector r = llt_.matrixL().solve(x_next - mean(x_prev));
    return -0.5 * (static_cast<double>(q_.size()) * std::log(2.0 * std::numbers::pi) + log_det() + r.squaredNorm());
}

Vector Propagator::whiten(const Eigen::Ref<const Vector>& v) const
{
    require_factor();
    return llt_.matrixL().solve(v);
}

double Propagator::log_det() const
{
    require_factor();
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

}  // namespace pmlds::ou
