#include "pmlds/finescale.hpp"

#include <cmath>

#include <fmt/format.h>

#include "pmlds/emission.hpp"
#include "pmlds/linalg.hpp"
#include "pmlds/ou.hpp"

namespace pmlds::finescale {

SyntheticConfig SyntheticConfig::defaults()
{
    std::vector<OuParams> experts{OuParams::isotropic(1, 0.1, -5.0, 0.2), OuParams::isotropic(1, 1.0, 5.0, 2.0)};
    return SyntheticConfig{10, 1.0, std::move(experts), OuParams::isotropic(2, 1.0, 0.0, 10.0), 100.0, 0.01};
}

SyntheticData generate_synthetic(const SyntheticConfig& config, int T_total, const StreamKey& key)
{
    if (config.d < 1 || config.experts.empty()) {
        throw InvalidArgument("generate_synthetic: need d >= 1 and at least one expert");
    }
    if (!(config.projection_variance >= 0.0) || !(config.noise_variance > 0.0)) {
        throw InvalidArgument("generate_synthetic: variances must be positive");
    }
    auto rng = key.child(tags::generate, 0).stream();
    const double sd = std::sqrt(config.projection_variance);
    std::vector<Matrix> P;
    for (const auto& e : config.experts) {
        Matrix p(config.d, e.dim());
        for (Eigen::Index j = 0; j < p.rows(); ++j) {
            for (Eigen::Index k = 0; k < p.cols(); ++k) {
                p(j, k) = sd * rng.normal();
            }
        }
        P.push_back(std::move(p));
    }
    StaticParams truth{config.experts, config.membership, std::move(P),
                       Vector::Constant(config.d, config.noise_variance)};
    return simulate(truth, config.dt, T_total, key.child(tags::generate, 1));
}

SyntheticData simulate(const StaticParams& statics, double dt, int T_total, const StreamKey& key,
                       const LatentState* start)
{
    statics.validate();
    if (T_total < 0) {
        throw InvalidArgument("simulate: T_total must be >= 0");
    }
    auto rng = key.stream();
    const int M = statics.M();
    const int K = statics.K();
    const int d = statics.d();

    LatentState s;
    if (start) {
        s = *start;
        if (s.X.size() != M * K || s.zhat.size() != M) {
            throw InvalidArgument("simulate: start state has the wrong dimensions");
        }
    } else {
        s.X.resize(M * K);
        for (int m = 0; m < M; ++m) {
            const auto g = ou::stationary(statics.ou_x[static_cast<std::size_t>(m)]);
            s.X.segment(m * K, K) = g.mean + linalg::sym_sqrt(g.cov) * rng.normal_vector(K);
        }
        const auto gz = ou::stationary(statics.ou_z);
        s.zhat = gz.mean + linalg::sym_sqrt(gz.cov) * rng.normal_vector(M);
    }

    std::vector<ou::Propagator> props;
    for (const auto& p : statics.ou_x) {
        props.emplace_back(p, dt);
    }
    const ou::Propagator zprop(statics.ou_z, dt);

    SyntheticData out{Matrix(T_total, d), Matrix(T_total, d), {}, statics};
    out.latent.reserve(static_cast<std::size_t>(T_total));
    for (int t = 0; t < T_total; ++t) {
        if (t > 0 || start) {
            for (int m = 0; m < M; ++m) {
                s.X.segment(m * K, K) = props[static_cast<std::size_t>(m)].sample(s.X.segment(m * K, K), rng);
            }
            s.zhat = zprop.sample(s.zhat, rng);
        }
        const Vector mu = emission::mean(to_simplex(s.zhat), statics.P, s.X);
        out.signal.row(t) = mu.transpose();
        for (int j = 0; j < d; ++j) {
            out.ys(t, j) = mu[j] + std::sqrt(statics.sigma2[j]) * rng.normal();
        }
        out.latent.push_back(s);
    }
    return out;
}

Vector HeatProblem::nodes() const
{
    return Vector::LinSpaced(n_nodes(), 0.0, 1.0);
}

void HeatProblem::validate() const
{
    if (n_elements < 2) {
        throw InvalidArgument("heat problem needs at least 2 elements");
    }
    if (conductivity.size() != n_elements) {
        throw InvalidArgument(fmt::format("conductivity has {} entries for {} elements", conductivity.size(),
                                          n_elements));
    }
    if (!conductivity.allFinite() || conductivity.minCoeff() <= 0.0) {
        throw InvalidArgument("conductivity must be positive and finite");
    }
    if (u0.size() != n_nodes() || !u0.allFinite()) {
        throw InvalidArgument(fmt::format("initial condition must have {} finite nodal values", n_nodes()));
    }
    if (!(dt_fine > 0.0)) {
        throw InvalidArgument("dt_fine must be positive");
    }
}

HeatProblem build_heat_problem(const StreamKey& key, int n_elements)
{
    if (n_elements < 2) {
        throw InvalidArgument("build_heat_problem: need at least 2 elements");
    }
    auto rng = key.child(tags::heat).stream();
    HeatProblem p;
    p.n_elements = n_elements;
    p.conductivity.resize(n_elements);
    const double h = 1.0 / n_elements;
    for (int e = 0; e < n_elements; ++e) {
        const double mid = (e + 0.5) * h;
        const double u = rng.uniform();
        p.conductivity[e] = mid <= 0.5 ? 0.01 + 0.09 * u : 0.51 + 0.09 * u;
    }
    const Vector x = p.nodes();
    p.u0.resize(p.n_nodes());
    for (int i = 0; i < p.n_nodes(); ++i) {
        p.u0[i] = 10.0 * x[i] * (1.0 - x[i]) * (1.0 + 0.1 * rng.normal());
    }
    p.u0[0] = 0.0;
    p.u0[n_elements] = 0.0;
    return p;
}

HeatStepper::HeatStepper(const HeatProblem& problem) : problem_(problem)
{
    problem_.validate();
    const int n = problem_.n_elements - 1;  // interior nodes
    const double h = 1.0 / problem_.n_elements;
    const double dt = problem_.dt_fine;
    const Vector& a = problem_.conductivity;

    mass_diag_ = Vector::Constant(n, problem_.lumped_mass ? h : 2.0 * h / 3.0);
    mass_off_ = Vector::Constant(std::max(n - 1, 0), problem_.lumped_mass ? 0.0 : h / 6.0);
    Vector diag(n);
    upper_.resize(std::max(n - 1, 0));
    for (int i = 0; i < n; ++i) {
        // Interior node i + 1 sits between elements i and i + 1.
        diag[i] = mass_diag_[i] + dt * (a[i] + a[i + 1]) / h;
        if (i + 1 < n) {
            upper_[i] = mass_off_[i] - dt * a[i + 1] / h;
        }
    }
    diag_.resize(n);
    lower_.resize(std::max(n - 1, 0));
    diag_[0] = diag[0];
    for (int i = 1; i < n; ++i) {
        lower_[i - 1] = upper_[i - 1] / diag_[i - 1];
        diag_[i] = diag[i] - lower_[i - 1] * upper_[i - 1];
        if (!(diag_[i] > 0.0)) {
            throw NumericalError("heat system is not positive-definite");
        }
    }
}

Vector HeatStepper::step(const Vector& u) const
{
    const int n = static_cast<int>(diag_.size());
    if (u.size() != n + 2) {
        throw InvalidArgument(fmt::format("heat state has {} entries, expected {}", u.size(), n + 2));
    }
    Vector rhs(n);
    for (int i = 0; i < n; ++i) {
        double v = mass_diag_[i] * u[i + 1];
        if (i > 0) {
            v += mass_off_[i - 1] * u[i];
        }
        if (i + 1 < n) {
            v += mass_off_[i] * u[i + 2];
        }
        rhs[i] = v;
    }
    for (int i = 1; i < n; ++i) {
        rhs[i] -= lower_[i - 1] * rhs[i - 1];
    }
    Vector out = Vector::Zero(n + 2);
    out[n] = rhs[n - 1] / diag_[n - 1];
    for (int i = n - 2; i >= 0; --i) {
        out[i + 1] = (rhs[i] - upper_[i] * out[i + 2]) / diag_[i];
    }
    return out;
}

Vector heat_step(const Vector& state, const HeatProblem& problem)
{
    return HeatStepper(problem).step(state);
}

}  // namespace pmlds::finescale
