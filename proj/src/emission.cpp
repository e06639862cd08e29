#include "pmlds/emission.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace pmlds::emission {

Matrix assemble_w(const Weights& z, const std::vector<Matrix>& P)
{
    if (P.empty() || static_cast<Eigen::Index>(P.size()) != z.z.size()) {
        throw InvalidArgument(fmt::format("assemble_w: {} weights for {} projections", z.z.size(), P.size()));
    }
    const auto d = P.front().rows();
    const auto K = P.front().cols();
    Matrix W(d, K * static_cast<Eigen::Index>(P.size()));
    for (std::size_t m = 0; m < P.size(); ++m) {
        if (P[m].rows() != d || P[m].cols() != K) {
            throw InvalidArgument("assemble_w: projections differ in shape");
        }
        W.middleCols(static_cast<Eigen::Index>(m) * K, K) = z.z[static_cast<Eigen::Index>(m)] * P[m];
    }
    return W;
}

Vector mean(const Weights& z, const std::vector<Matrix>& P, const Vector& X)
{
    const auto K = P.front().cols();
    Vector out = Vector::Zero(P.front().rows());
    for (std::size_t m = 0; m < P.size(); ++m) {
        const auto mi = static_cast<Eigen::Index>(m);
        out.noalias() += z.z[mi] * (P[m] * X.segment(mi * K, K));
    }
    return out;
}

double log_likelihood(const Vector& y, const LatentState& state, const StaticParams& statics)
{
    if (y.size() != statics.d()) {
        throw InvalidArgument(fmt::format("log_likelihood: y has {} entries, model has d={}", y.size(), statics.d()));
    }
    if (state.X.size() != statics.M() * statics.K() || state.zhat.size() != statics.M()) {
        throw InvalidArgument(fmt::format("log_likelihood: state has X of size {} and zhat of size {}, model has "
                                          "M={} K={}",
                                          state.X.size(), state.zhat.size(), statics.M(), statics.K()));
    }
    const Vector mu = mean(to_simplex(state.zhat), statics.P, state.X);
    double ll = 0.0;
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        const double r = y[j] - mu[j];
        ll -= 0.5 * (std::log(2.0 * std::numbers::pi * statics.sigma2[j]) + r * r / statics.sigma2[j]);
    }
    return ll;
}

Vector sample_observation(const LatentState& state, const StaticParams& statics, RandomStream& rng)
{
    Vector y = mean(to_simplex(state.zhat), statics.P, state.X);
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        y[j] += std::sqrt(statics.sigma2[j]) * rng.normal();
    }
    return y;
}

}  // namespace pmlds::emission
