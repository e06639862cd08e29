#include "pmlds/smc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "pmlds/emission.hpp"
#include "pmlds/io.hpp"
#include "pmlds/linalg.hpp"

namespace pmlds::smc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_of(const std::vector<double>& v)
{
    double mx = kNegInf;
    for (double x : v) {
        mx = std::max(mx, x);
    }
    return mx;
}

/// Samples an index with probability proportional to exp(lw[i]).
int sample_index(const std::vector<double>& lw, RandomStream& rng, std::vector<double>& scratch)
{
    const double mx = max_of(lw);
    if (!std::isfinite(mx)) {
        throw DegenerateCloud("all particle weights are zero");
    }
    scratch.resize(lw.size());
    double total = 0.0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
        total += std::exp(lw[i] - mx);
        scratch[i] = total;
    }
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(scratch.begin(), scratch.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - scratch.begin(), static_cast<std::ptrdiff_t>(lw.size()) - 1));
}

/// Gaussian prior on X for one step: the transition (or stationary) law.
struct XPrior {
    Matrix cov;
    Matrix precision;
    double log_det = 0.0;
};

XPrior make_prior(const Matrix& cov)
{
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("latent prior covariance is not positive-definite");
    }
    XPrior p;
    p.cov = cov;
    p.precision = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    p.log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return p;
}

struct Draw {
    Vector X;
    double log_u = 0.0;
};

/// Fused proposal: builds W^T Sigma^{-1} directly from the z-scaled
/// projections and reuses the precision factor for the mean, the weight and
/// the draw.
Draw draw_optimal(const Vector& mu, const XPrior& prior, const Weights& z, const StaticParams& s,
                  const Vector& sigma_inv, const Vector& y, RandomStream& rng)
{
    const auto K = s.K();
    const auto n = mu.size();
    Matrix W(s.d(), n);
    for (int m = 0; m < s.M(); ++m) {
        W.middleCols(m * K, K) = z.z[m] * s.P[static_cast<std::size_t>(m)];
    }
    const Matrix WtSi = (W.array().colwise() * sigma_inv.array()).matrix().transpose();
    Matrix prec = prior.precision;
    prec.noalias() += WtSi * W;
    const Vector prior_h = prior.precision * mu;
    Vector h = prior_h;
    h.noalias() += WtSi * y;
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("proposal precision is not positive-definite");
    }
    Draw out;
    const Vector mu_bar = llt.solve(h);
    out.log_u = -llt.matrixLLT().diagonal().array().log().sum() + 0.5 * mu_bar.dot(h) - 0.5 * mu.dot(prior_h);
    const Vector eps = rng.normal_vector(n);
    out.X = mu_bar + llt.matrixU().solve(eps);
    return out;
}

/// Straightforward version: explicit W, explicit inverses, and the public
/// incremental_weight(). Same random draws as draw_optimal().
Draw draw_optimal_reference(const Vector& mu, const XPrior& prior, const Weights& z, const StaticParams& s,
                            const Vector& y, RandomStream& rng)
{
    const Matrix W = emission::assemble_w(z, s.P);
    const Matrix Sigma_inv = s.sigma2.cwiseInverse().asDiagonal();
    const Matrix prec = prior.cov.inverse() + W.transpose() * Sigma_inv * W;
    const Matrix S_bar = prec.inverse();
    const Vector mu_bar = S_bar * (prior.cov.inverse() * mu + W.transpose() * Sigma_inv * y);
    Draw out;
    out.log_u = incremental_weight(mu, mu_bar, prior.cov, S_bar);
    const Eigen::LLT<Matrix> llt(prec);
    const Vector eps = rng.normal_vector(mu.size());
    out.X = mu_bar + llt.matrixU().solve(eps);
    return out;
}

/// Precomputation shared by all particles of a step.
struct StepEngine {
    const StaticParams& statics;
    const ModelConfig& config;
    TransitionModel model;
    XPrior transition_prior;
    XPrior stationary_prior;
    Vector stationary_X;
    Matrix stationary_z_sqrt;
    Vector sigma_inv;

    StepEngine(const StaticParams& s, const ModelConfig& c)
        : statics(s),
          config(c),
          model(s, c.dt),
          transition_prior(make_prior(model.S_X())),
          stationary_prior(make_prior([&] {
              std::vector<Matrix> blocks;
              for (const auto& p : s.ou_x) {
                  blocks.push_back(p.S() / (2.0 * p.b()));
              }
              return linalg::block_diag(blocks);
          }())),
          stationary_X(s.M() * s.K()),
          stationary_z_sqrt(linalg::sym_sqrt(s.ou_z.S() / (2.0 * s.ou_z.b()))),
          sigma_inv(s.sigma2.cwiseInverse())
    {
        for (int m = 0; m < s.M(); ++m) {
            stationary_X.segment(m * s.K(), s.K()) = s.ou_x[static_cast<std::size_t>(m)].q();
        }
    }

    Draw draw(const Vector& mu, const XPrior& prior, const Weights& z, const Vector& y, RandomStream& rng,
              Exec exec) const
    {
        return exec == Exec::parallel ? draw_optimal(mu, prior, z, statics, sigma_inv, y, rng)
                                      : draw_optimal_reference(mu, prior, z, statics, y, rng);
    }

    StepResult finish(std::vector<Particle> particles, const std::vector<double>& prev_log_w,
                      const std::vector<double>& log_u, double constant, const StreamKey& key) const
    {
        const auto n = static_cast<int>(particles.size());
        std::vector<double> incr(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            incr[static_cast<std::size_t>(i)] = prev_log_w[static_cast<std::size_t>(i)] + log_u[static_cast<std::size_t>(i)];
        }
        // log u_t can be of order 1e6 when sigma2 is small; shifting first
        // keeps the normalized weights accurate to rounding.
        const double shift = max_of(incr);
        if (!std::isfinite(shift)) {
            throw DegenerateCloud("all particle weights are zero");
        }
        for (int i = 0; i < n; ++i) {
            particles[static_cast<std::size_t>(i)].log_weight = incr[static_cast<std::size_t>(i)] - shift;
        }
        StepResult r;
        r.weighted.particles = std::move(particles);
        const double log_sum = r.weighted.normalize();
        r.log_evidence_increment = log_sum + shift + constant;
        r.ess = r.weighted.ess();
        if (r.ess < config.ess_min_fraction * static_cast<double>(n)) {
            auto rng = key.child(tags::resample).stream();
            const auto idx = multinomial_resample(r.weighted.log_weights(), n, rng);
            r.next.particles.reserve(static_cast<std::size_t>(n));
            for (int i : idx) {
                r.next.particles.push_back({r.weighted.particles[static_cast<std::size_t>(i)].state,
                                            -std::log(static_cast<double>(n))});
            }
            r.next.normalized = true;
            r.resampled = true;
        } else {
            r.next = r.weighted;
        }
        return r;
    }

    StepResult init(const Vector& y1, const StreamKey& key, Exec exec) const
    {
        const int n = config.N;
        std::vector<Particle> particles(static_cast<std::size_t>(n));
        std::vector<double> log_u(static_cast<std::size_t>(n));
        for_each_index(exec, n, [&](std::ptrdiff_t i) {
            auto rng = key.stream(static_cast<std::uint64_t>(i));
            Vector zhat = statics.ou_z.q() + stationary_z_sqrt * rng.normal_vector(statics.M());
            const Weights z = to_simplex(zhat);
            Draw dr = draw(stationary_X, stationary_prior, z, y1, rng, exec);
            particles[static_cast<std::size_t>(i)] = {{std::move(dr.X), std::move(zhat)}, 0.0};
            log_u[static_cast<std::size_t>(i)] = dr.log_u;
        });
        const std::vector<double> prior_w(static_cast<std::size_t>(n), -std::log(static_cast<double>(n)));
        return finish(std::move(particles), prior_w, log_u,
                      evidence_constant(stationary_prior.cov, y1, statics.sigma2), key);
    }

    StepResult step(const ParticleCloud& cloud, const Vector& y, const StreamKey& key, Exec exec) const
    {
        if (!cloud.normalized) {
            throw InvalidArgument("filter_step: cloud must be normalized");
        }
        const auto n = static_cast<std::ptrdiff_t>(cloud.size());
        std::vector<Particle> particles(static_cast<std::size_t>(n));
        std::vector<double> log_u(static_cast<std::size_t>(n));
        for_each_index(exec, n, [&](std::ptrdiff_t i) {
            const auto& prev = cloud.particles[static_cast<std::size_t>(i)].state;
            auto rng = key.stream(static_cast<std::uint64_t>(i));
            Vector zhat = model.membership().sample(prev.zhat, rng);
            const Weights z = to_simplex(zhat);
            Draw dr = draw(model.mean_X(prev.X), transition_prior, z, y, rng, exec);
            particles[static_cast<std::size_t>(i)] = {{std::move(dr.X), std::move(zhat)}, 0.0};
            log_u[static_cast<std::size_t>(i)] = dr.log_u;
        });
        return finish(std::move(particles), cloud.log_weights(), log_u,
                      evidence_constant(transition_prior.cov, y, statics.sigma2), key);
    }
};

void check_observation(const Vector& y, const StaticParams& s)
{
    if (y.size() != s.d()) {
        throw InvalidArgument(fmt::format("observation has {} entries, model has d={}", y.size(), s.d()));
    }
    if (!y.allFinite()) {
        throw DataError("non-finite observation");
    }
}

}  // namespace

double ParticleCloud::normalize()
{
    std::vector<double> lw = log_weights();
    const double log_sum = linalg::log_sum_exp(lw);
    if (!std::isfinite(log_sum)) {
        throw DegenerateCloud("all particle weights are zero");
    }
    for (auto& p : particles) {
        p.log_weight -= log_sum;
    }
    normalized = true;
    return log_sum;
}

double ParticleCloud::ess() const
{
    double s = 0.0;
    for (const auto& p : particles) {
        const double w = std::exp(p.log_weight);
        s += w * w;
    }
    return 1.0 / s;
}

std::vector<double> ParticleCloud::log_weights() const
{
    std::vector<double> lw;
    lw.reserve(particles.size());
    for (const auto& p : particles) {
        lw.push_back(p.log_weight);
    }
    return lw;
}

Vector ParticleCloud::mean_X() const
{
    Vector m = Vector::Zero(particles.front().state.X.size());
    for (const auto& p : particles) {
        m += std::exp(p.log_weight) * p.state.X;
    }
    return m;
}

TransitionModel::TransitionModel(const StaticParams& statics, double dt)
    : z_(statics.ou_z, dt), K_(statics.K())
{
    std::vector<Matrix> blocks;
    x_.reserve(statics.ou_x.size());
    for (const auto& p : statics.ou_x) {
        x_.emplace_back(p, dt);
        blocks.push_back(x_.back().cov());
    }
    S_X_ = linalg::block_diag(blocks);
}

Vector TransitionModel::mean_X(const Vector& X_prev) const
{
    Vector out(X_prev.size());
    for (std::size_t m = 0; m < x_.size(); ++m) {
        const auto at = static_cast<Eigen::Index>(m) * K_;
        out.segment(at, K_) = x_[m].mean(X_prev.segment(at, K_));
    }
    return out;
}

double TransitionModel::log_density(const LatentState& prev, const LatentState& next) const
{
    double lp = z_.log_density(prev.zhat, next.zhat);
    for (std::size_t m = 0; m < x_.size(); ++m) {
        const auto at = static_cast<Eigen::Index>(m) * K_;
        lp += x_[m].log_density(prev.X.segment(at, K_), next.X.segment(at, K_));
    }
    return lp;
}

Gaussian optimal_proposal(const Vector& mu_t, const Matrix& S_X, const Matrix& W, const Vector& y,
                          const Vector& sigma2)
{
    if (W.cols() != mu_t.size() || W.rows() != y.size() || sigma2.size() != y.size()) {
        throw InvalidArgument("optimal_proposal: inconsistent dimensions");
    }
    Eigen::LLT<Matrix> sx(S_X);
    if (sx.info() != Eigen::Success) {
        throw NumericalError("optimal_proposal: S_X is not positive-definite");
    }
    const Matrix WtSi = (W.array().colwise() / sigma2.array()).matrix().transpose();
    const Matrix prec = sx.solve(Matrix::Identity(S_X.rows(), S_X.cols())) + WtSi * W;
    Eigen::LLT<Matrix> lp(prec);
    if (lp.info() != Eigen::Success) {
        throw NumericalError("optimal_proposal: singular posterior precision");
    }
    Gaussian g;
    g.cov = lp.solve(Matrix::Identity(prec.rows(), prec.cols()));
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    g.mean = lp.solve(sx.solve(mu_t) + WtSi * y);
    return g;
}

Gaussian optimal_proposal(const Vector& x_prev, const Weights& z, const Vector& y, const StaticParams& statics,
                          double dt)
{
    const TransitionModel model(statics, dt);
    return optimal_proposal(model.mean_X(x_prev), model.S_X(), emission::assemble_w(z, statics.P), y,
                            statics.sigma2);
}

double incremental_weight(const Vector& mu_t, const Vector& mu_bar, const Matrix& S_X, const Matrix& S_bar)
{
    Eigen::LLT<Matrix> lb(S_bar);
    Eigen::LLT<Matrix> lx(S_X);
    if (lb.info() != Eigen::Success || lx.info() != Eigen::Success) {
        throw NumericalError("incremental_weight: covariance is not positive-definite");
    }
    const double half_log_det = lb.matrixLLT().diagonal().array().log().sum();
    const double qb = lb.matrixL().solve(mu_bar).squaredNorm();
    const double qx = lx.matrixL().solve(mu_t).squaredNorm();
    return half_log_det + 0.5 * qb - 0.5 * qx;
}

double evidence_constant(const Matrix& S_X, const Vector& y, const Vector& sigma2)
{
    double c = -0.5 * linalg::log_det_spd(S_X);
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        c -= 0.5 * (std::log(2.0 * std::numbers::pi * sigma2[j]) + y[j] * y[j] / sigma2[j]);
    }
    return c;
}

StepResult init_cloud(const StaticParams& statics, const Vector& y1, const ModelConfig& config,
                      const StreamKey& key, Exec exec)
{
    statics.validate_against(config);
    check_observation(y1, statics);
    return StepEngine(statics, config).init(y1, key, exec);
}

StepResult filter_step(const ParticleCloud& cloud, const Vector& y, const StaticParams& statics,
                       const ModelConfig& config, const StreamKey& key, Exec exec)
{
    statics.validate_against(config);
    check_observation(y, statics);
    return StepEngine(statics, config).step(cloud, y, key, exec);
}

std::vector<int> multinomial_resample(const std::vector<double>& log_weights, int n, RandomStream& rng)
{
    const double mx = max_of(log_weights);
    if (!std::isfinite(mx)) {
        throw DegenerateCloud("cannot resample: all weights are zero");
    }
    std::vector<double> cum(log_weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < log_weights.size(); ++i) {
        total += std::exp(log_weights[i] - mx);
        cum[i] = total;
    }
    std::vector<int> out(static_cast<std::size_t>(n));
    for (auto& o : out) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cum.begin(), cum.end(), u);
        o = static_cast<int>(std::min<std::ptrdiff_t>(it - cum.begin(), static_cast<std::ptrdiff_t>(cum.size()) - 1));
    }
    return out;
}

double FilterTrace::total_log_evidence() const
{
    double s = 0.0;
    for (double v : log_evidence) {
        s += v;
    }
    return s;
}

namespace {

void record(FilterTrace& trace, StepResult&& r)
{
    trace.ess.push_back(r.ess);
    trace.log_evidence.push_back(r.log_evidence_increment);
    trace.resampled.push_back(r.resampled);
    trace.clouds.push_back(std::move(r.weighted));
    trace.last = std::move(r.next);
}

}  // namespace

FilterTrace run_filter(const Matrix& ys, const StaticParams& statics, const ModelConfig& config,
                       const StreamKey& key, Exec exec)
{
    statics.validate_against(config);
    if (ys.rows() < 1) {
        throw InvalidArgument("run_filter: no observations");
    }
    const StepEngine engine(statics, config);
    FilterTrace trace;
    Vector y = ys.row(0).transpose();
    check_observation(y, statics);
    record(trace, engine.init(y, key.child(tags::init), exec));
    for (Eigen::Index t = 1; t < ys.rows(); ++t) {
        y = ys.row(t).transpose();
        check_observation(y, statics);
        record(trace, engine.step(trace.last, y, key.child(tags::filter, static_cast<std::uint64_t>(t)), exec));
    }
    return trace;
}

FilterTrace continue_filter(const ParticleCloud& start, const Matrix& ys, const StaticParams& statics,
                            const ModelConfig& config, const StreamKey& key, Exec exec)
{
    statics.validate_against(config);
    const StepEngine engine(statics, config);
    FilterTrace trace;
    trace.last = start;
    for (Eigen::Index t = 0; t < ys.rows(); ++t) {
        const Vector y = ys.row(t).transpose();
        check_observation(y, statics);
        record(trace, engine.step(trace.last, y, key.child(tags::filter, static_cast<std::uint64_t>(t)), exec));
    }
    return trace;
}

namespace {

/// Whitened coordinates: with S_delta = L L^T per component,
/// -1/2 |L^{-1}(next - mean(prev))|^2 is the transition log-density up to a
/// constant shared by all candidates.
Vector whitened(const TransitionModel& model, const LatentState& s, bool apply_mean)
{
    const int K = model.K();
    const auto M = static_cast<int>(model.experts().size());
    Vector out(M * K + M);
    for (int m = 0; m < M; ++m) {
        const auto& prop = model.experts()[static_cast<std::size_t>(m)];
        const Vector x = s.X.segment(m * K, K);
        out.segment(m * K, K) = prop.whiten(apply_mean ? prop.mean(x) : x);
    }
    out.tail(M) = model.membership().whiten(apply_mean ? model.membership().mean(s.zhat) : Vector(s.zhat));
    return out;
}

}  // namespace

std::vector<Trajectory> backward_smooth(const std::vector<ParticleCloud>& clouds, const StaticParams& statics,
                                        const ModelConfig& config, const StreamKey& key, Exec exec, int n_out)
{
    if (clouds.empty()) {
        throw InvalidArgument("backward_smooth: no filtering clouds");
    }
    const auto L = static_cast<int>(clouds.size());
    const int n_traj = n_out < 0 ? static_cast<int>(clouds.back().size()) : n_out;
    const TransitionModel model(statics, config.dt);

    // cand[t][i]: whitened predicted mean from particle i at step t (t < L-1)
    // tgt[t][i]:  whitened particle i at step t (t > 0)
    std::vector<std::vector<Vector>> cand(static_cast<std::size_t>(L));
    std::vector<std::vector<Vector>> tgt(static_cast<std::size_t>(L));
    std::vector<std::vector<double>> logw(static_cast<std::size_t>(L));
    for (int t = 0; t < L; ++t) {
        const auto& c = clouds[static_cast<std::size_t>(t)];
        logw[static_cast<std::size_t>(t)] = c.log_weights();
        if (exec == Exec::parallel) {
            auto& ct = cand[static_cast<std::size_t>(t)];
            auto& tt = tgt[static_cast<std::size_t>(t)];
            if (t < L - 1) {
                ct.resize(c.size());
            }
            if (t > 0) {
                tt.resize(c.size());
            }
            for_each_index(exec, static_cast<std::ptrdiff_t>(c.size()), [&](std::ptrdiff_t i) {
                const auto& s = c.particles[static_cast<std::size_t>(i)].state;
                if (t < L - 1) {
                    ct[static_cast<std::size_t>(i)] = whitened(model, s, true);
                }
                if (t > 0) {
                    tt[static_cast<std::size_t>(i)] = whitened(model, s, false);
                }
            });
        }
    }

    std::vector<Trajectory> out(static_cast<std::size_t>(n_traj), Trajectory(static_cast<std::size_t>(L)));
    for_each_index(exec, n_traj, [&](std::ptrdiff_t j) {
        auto rng = key.stream(static_cast<std::uint64_t>(j));
        std::vector<double> lw;
        std::vector<double> scratch;
        auto& traj = out[static_cast<std::size_t>(j)];
        int sel = sample_index(logw.back(), rng, scratch);
        traj.back() = clouds.back().particles[static_cast<std::size_t>(sel)].state;
        for (int t = L - 2; t >= 0; --t) {
            const auto& c = clouds[static_cast<std::size_t>(t)];
            const auto& w = logw[static_cast<std::size_t>(t)];
            lw.resize(c.size());
            if (exec == Exec::parallel) {
                const Vector& target = tgt[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(sel)];
                const auto& ct = cand[static_cast<std::size_t>(t)];
                for (std::size_t i = 0; i < c.size(); ++i) {
                    lw[i] = w[i] - 0.5 * (target - ct[i]).squaredNorm();
                }
            } else {
                const auto& next = traj[static_cast<std::size_t>(t + 1)];
                for (std::size_t i = 0; i < c.size(); ++i) {
                    lw[i] = w[i] + model.log_density(c.particles[i].state, next);
                }
            }
            sel = sample_index(lw, rng, scratch);
            traj[static_cast<std::size_t>(t)] = c.particles[static_cast<std::size_t>(sel)].state;
        }
    });
    return out;
}

void write_diagnostics_csv(const std::string& path, const FilterTrace& trace)
{
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write '{}'", path));
    }
    out << "t,ess,log_evidence_increment\n";
    for (std::size_t t = 0; t < trace.ess.size(); ++t) {
        out << t + 1 << ',' << io::format_double(trace.ess[t]) << ',' << io::format_double(trace.log_evidence[t])
            << '\n';
    }
}

}  // namespace pmlds::smc
