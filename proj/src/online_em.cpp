#include "pmlds/online_em.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pmlds/io.hpp"
#include "pmlds/membership.hpp"
#include "pmlds/ou.hpp"

namespace pmlds::em {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr double kMinB = 1e-8;
constexpr double kEigenFloor = 1e-12;

void accumulate_path(OuSuffStats& s, const std::vector<Vector>& path)
{
    const Vector& x1 = path.front();
    s.phi1 += x1;
    s.phi2 += x1 * x1.transpose();
    for (std::size_t t = 1; t < path.size(); ++t) {
        const Vector& prev = path[t - 1];
        const Vector diff = path[t] - prev;
        s.phi3 += prev;
        s.phi4 += diff;
        s.phi5 += prev * prev.transpose();
        s.phi6 += diff * prev.transpose();
        s.phi7 += diff * diff.transpose();
    }
}

void scale(OuSuffStats& s, double f)
{
    s.phi1 *= f;
    s.phi2 *= f;
    s.phi3 *= f;
    s.phi4 *= f;
    s.phi5 *= f;
    s.phi6 *= f;
    s.phi7 *= f;
}

OuSuffStats mix(const OuSuffStats& a, const OuSuffStats& b, double g)
{
    return {(1 - g) * a.phi1 + g * b.phi1, (1 - g) * a.phi2 + g * b.phi2, (1 - g) * a.phi3 + g * b.phi3,
            (1 - g) * a.phi4 + g * b.phi4, (1 - g) * a.phi5 + g * b.phi5, (1 - g) * a.phi6 + g * b.phi6,
            (1 - g) * a.phi7 + g * b.phi7};
}

Matrix symmetrize(const Matrix& m)
{
    return 0.5 * (m + m.transpose());
}

/// Clips the eigenvalues of a symmetric matrix from below. Returns true when
/// any eigenvalue was raised.
bool floor_eigenvalues(Matrix& S)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S));
    Vector ev = es.eigenvalues();
    const double floor = kEigenFloor * std::max(1.0, ev.cwiseAbs().maxCoeff());
    bool changed = false;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (!(ev[i] >= floor)) {
            ev[i] = floor;
            changed = true;
        }
    }
    if (changed) {
        S = symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    }
    return changed;
}

/// Residual scatter of the L-1 transitions around the conditional means for
/// decay complement beta and centre q.
Matrix transition_scatter(const OuSuffStats& s, double beta, const Vector& q, int L)
{
    const Vector drift = s.phi4 + beta * s.phi3;
    Matrix R = s.phi7 + beta * (s.phi6 + s.phi6.transpose()) + beta * beta * s.phi5;
    R -= beta * (drift * q.transpose() + q * drift.transpose());
    R += static_cast<double>(L - 1) * beta * beta * q * q.transpose();
    return R;
}

Matrix initial_scatter(const OuSuffStats& s, const Vector& q)
{
    return s.phi2 - s.phi1 * q.transpose() - q * s.phi1.transpose() + q * q.transpose();
}

/// Q maximized over (q, S) for a fixed b.
double profile_objective(const OuSuffStats& s, double b, double dt, int L)
{
    const auto [q, S] = ou_optimal_q_S(s, b, dt, L);
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    const Vector ev = es.eigenvalues();
    const double floor = kEigenFloor * std::max(1.0, ev.cwiseAbs().maxCoeff());
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        log_det += std::log(std::max(ev[i], floor));
    }
    const double n = static_cast<double>(q.size());
    const double c = ou::transition_scale(b, dt);
    return -0.5 * L * log_det + 0.5 * n * std::log(2.0 * b) - 0.5 * (L - 1) * n * std::log(c) - 0.5 * n * L;
}

OuSuffStats stats_from_json(const nlohmann::json& j)
{
    OuSuffStats s;
    s.phi1 = vector_from_json(j.at("phi1"));
    s.phi2 = matrix_from_json(j.at("phi2"));
    s.phi3 = vector_from_json(j.at("phi3"));
    s.phi4 = vector_from_json(j.at("phi4"));
    s.phi5 = matrix_from_json(j.at("phi5"));
    s.phi6 = matrix_from_json(j.at("phi6"));
    s.phi7 = matrix_from_json(j.at("phi7"));
    return s;
}

}  // namespace

OuSuffStats OuSuffStats::zeros(int n)
{
    return {Vector::Zero(n), Matrix::Zero(n, n), Vector::Zero(n), Vector::Zero(n),
            Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
}

Matrix EmissionSuffStats::stacked_A() const
{
    const auto d = A.front().rows();
    const auto K = A.front().cols();
    Matrix out(d, K * static_cast<Eigen::Index>(A.size()));
    for (std::size_t m = 0; m < A.size(); ++m) {
        out.middleCols(static_cast<Eigen::Index>(m) * K, K) = A[m];
    }
    return out;
}

OuSuffStats ou_suff_stats(const std::vector<Vector>& path)
{
    if (path.empty()) {
        throw InvalidArgument("ou_suff_stats: empty path");
    }
    auto s = OuSuffStats::zeros(static_cast<int>(path.front().size()));
    accumulate_path(s, path);
    return s;
}

SuffStats block_suff_stats(const std::vector<smc::Trajectory>& trajectories, const Matrix& block_ys, int K)
{
    if (trajectories.empty()) {
        throw InvalidArgument("block_suff_stats: no trajectories");
    }
    const auto L = static_cast<std::size_t>(block_ys.rows());
    const auto d = block_ys.cols();
    const auto& first = trajectories.front();
    if (first.empty() || K <= 0 || first.front().X.size() % K != 0) {
        throw InvalidArgument("block_suff_stats: malformed trajectory");
    }
    const int M = static_cast<int>(first.front().X.size() / K);
    const int MK = M * K;

    SuffStats out;
    out.block_len = static_cast<int>(L);
    out.ou_x.assign(static_cast<std::size_t>(M), OuSuffStats::zeros(K));
    out.ou_z = OuSuffStats::zeros(M);
    out.emission.B = Matrix::Zero(MK, MK);
    // Mean over trajectories of the z-scaled stacked state, per step.
    Matrix v_mean = Matrix::Zero(static_cast<Eigen::Index>(L), MK);

    std::vector<Vector> path(L);
    for (const auto& traj : trajectories) {
        if (traj.size() != L) {
            throw InvalidArgument(
                fmt::format("block_suff_stats: trajectory has {} steps, block has {}", traj.size(), L));
        }
        for (int m = 0; m < M; ++m) {
            for (std::size_t t = 0; t < L; ++t) {
                path[t] = traj[t].X.segment(m * K, K);
            }
            accumulate_path(out.ou_x[static_cast<std::size_t>(m)], path);
        }
        for (std::size_t t = 0; t < L; ++t) {
            path[t] = traj[t].zhat;
        }
        accumulate_path(out.ou_z, path);
        for (std::size_t t = 0; t < L; ++t) {
            const Weights z = to_simplex(traj[t].zhat);
            Vector v(MK);
            for (int m = 0; m < M; ++m) {
                v.segment(m * K, K) = z.z[m] * traj[t].X.segment(m * K, K);
            }
            out.emission.B.noalias() += v * v.transpose();
            v_mean.row(static_cast<Eigen::Index>(t)) += v.transpose();
        }
    }
    const double inv_n = 1.0 / static_cast<double>(trajectories.size());
    for (auto& s : out.ou_x) {
        scale(s, inv_n);
    }
    scale(out.ou_z, inv_n);
    out.emission.B *= inv_n;
    v_mean *= inv_n;

    const Matrix A = block_ys.transpose() * v_mean;  // d x MK
    out.emission.A.resize(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        out.emission.A[static_cast<std::size_t>(m)] = A.middleCols(m * K, K);
    }
    out.emission.ysq = block_ys.array().square().colwise().sum().transpose();
    (void)d;
    return out;
}

double step_size(int k, double a)
{
    if (k < 1) {
        throw InvalidArgument("step_size: k must be >= 1");
    }
    return std::pow(static_cast<double>(k), -a);
}

SuffStats blend(const SuffStats& prev, const SuffStats& next, double gamma)
{
    if (prev.ou_x.size() != next.ou_x.size() || prev.block_len != next.block_len) {
        throw InvalidArgument("blend: statistics have different shapes");
    }
    SuffStats out;
    out.block_len = next.block_len;
    for (std::size_t m = 0; m < next.ou_x.size(); ++m) {
        out.ou_x.push_back(mix(prev.ou_x[m], next.ou_x[m], gamma));
    }
    out.ou_z = mix(prev.ou_z, next.ou_z, gamma);
    for (std::size_t m = 0; m < next.emission.A.size(); ++m) {
        out.emission.A.push_back((1 - gamma) * prev.emission.A[m] + gamma * next.emission.A[m]);
    }
    out.emission.B = (1 - gamma) * prev.emission.B + gamma * next.emission.B;
    out.emission.ysq = (1 - gamma) * prev.emission.ysq + gamma * next.emission.ysq;
    return out;
}

SuffStats blend(const SuffStats& prev, const SuffStats& next, int k, double a)
{
    return blend(prev, next, step_size(k, a));
}

double ou_expected_loglik(const OuSuffStats& stats, const OuParams& params, double dt, int L)
{
    const double b = params.b();
    const double beta = ou::decay_complement(b, dt);
    const double c = ou::transition_scale(b, dt);
    const double n = params.dim();
    Eigen::LLT<Matrix> llt(params.S());
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const Matrix total = 2.0 * b * initial_scatter(stats, params.q()) + transition_scatter(stats, beta, params.q(), L) / c;
    const double trace = llt.solve(total).trace();
    return -0.5 * L * log_det + 0.5 * n * std::log(2.0 * b) - 0.5 * (L - 1) * n * std::log(c) - 0.5 * trace;
}

std::pair<Vector, Matrix> ou_optimal_q_S(const OuSuffStats& stats, double b, double dt, int L)
{
    const double beta = ou::decay_complement(b, dt);
    const double c = ou::transition_scale(b, dt);
    const Vector q = (2.0 * b * stats.phi1 + (beta / c) * (stats.phi4 + beta * stats.phi3)) /
                     (2.0 * b + (L - 1) * beta * beta / c);
    const Matrix S = symmetrize((2.0 * b * initial_scatter(stats, q) + transition_scatter(stats, beta, q, L) / c) /
                                static_cast<double>(L));
    return {q, S};
}

OuParams update_ou_params(const OuSuffStats& stats, double dt, int L, OuUpdateInfo* info)
{
    if (L < 2) {
        throw InvalidArgument("update_ou_params: block length must be >= 2");
    }
    if (!(dt > 0.0)) {
        throw InvalidArgument("update_ou_params: dt must be positive");
    }
    OuUpdateInfo local;
    OuUpdateInfo& inf = info ? *info : local;
    inf = {};

    // Search in u = log(b dt).
    const double u_lo = std::log(1e-10);
    const double u_hi = std::log(50.0);
    auto neg = [&](double u) {
        ++inf.evaluations;
        const double v = profile_objective(stats, std::exp(u) / dt, dt, L);
        return std::isfinite(v) ? -v : std::numeric_limits<double>::max();
    };
    constexpr int kGrid = 64;
    std::vector<double> grid(kGrid + 1);
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
        grid[static_cast<std::size_t>(i)] = u_lo + (u_hi - u_lo) * i / kGrid;
        const double v = neg(grid[static_cast<std::size_t>(i)]);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    const double a = grid[static_cast<std::size_t>(std::max(best - 1, 0))];
    const double bnd = grid[static_cast<std::size_t>(std::min(best + 1, kGrid))];
    std::uintmax_t max_iter = 200;
    const auto res = boost::math::tools::brent_find_minima(neg, a, bnd, 40, max_iter);
    double b = std::exp(res.first) / dt;
    if (b < kMinB) {
        spdlog::warn("OU rate estimate {:.3g} below {:.0e}; clamped", b, kMinB);
        b = kMinB;
        inf.b_clamped = true;
    }
    auto [q, S] = ou_optimal_q_S(stats, b, dt, L);
    if (floor_eigenvalues(S)) {
        inf.S_floored = true;
        spdlog::debug("OU diffusion matrix floored");
    }
    return OuParams(b, std::move(q), std::move(S));
}

std::vector<Matrix> update_projections(const EmissionSuffStats& stats, double prior_variance, int K, Exec exec)
{
    const auto MK = stats.B.rows();
    Matrix reg = symmetrize(stats.B);
    if (prior_variance > 0.0 && std::isfinite(prior_variance)) {
        reg.diagonal().array() += 1.0 / prior_variance;
    }
    const Eigen::LLT<Matrix> llt(reg);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("update_projections: emission statistic B is singular");
    }
    const Matrix A = stats.stacked_A();
    const auto d = A.rows();
    Matrix P(d, MK);
    for_each_index(exec, d, [&](std::ptrdiff_t j) {
        P.row(j) = llt.solve(A.row(j).transpose()).transpose();
    });
    std::vector<Matrix> out;
    for (Eigen::Index m = 0; m < MK / K; ++m) {
        out.emplace_back(P.middleCols(m * K, K));
    }
    return out;
}

namespace {

Matrix stack(const std::vector<Matrix>& P)
{
    const auto d = P.front().rows();
    const auto K = P.front().cols();
    Matrix out(d, K * static_cast<Eigen::Index>(P.size()));
    for (std::size_t m = 0; m < P.size(); ++m) {
        out.middleCols(static_cast<Eigen::Index>(m) * K, K) = P[m];
    }
    return out;
}

/// ysq_j - 2 A_j P_j^T + P_j B P_j^T for every row j.
Vector residual_sums(const EmissionSuffStats& stats, const std::vector<Matrix>& P, Exec exec)
{
    const Matrix Ps = stack(P);
    const Matrix A = stats.stacked_A();
    if (Ps.rows() != A.rows() || Ps.cols() != A.cols()) {
        throw InvalidArgument("projection shape does not match the statistics");
    }
    Vector r(A.rows());
    for_each_index(exec, A.rows(), [&](std::ptrdiff_t j) {
        const Vector p = Ps.row(j).transpose();
        r[j] = stats.ysq[j] - 2.0 * A.row(j).dot(p) + p.dot(stats.B * p);
    });
    return r;
}

}  // namespace

Vector update_sigmas(const EmissionSuffStats& stats, const std::vector<Matrix>& P, double count, Exec exec)
{
    if (!(count > 0.0)) {
        throw InvalidArgument("update_sigmas: count must be positive");
    }
    Vector s = residual_sums(stats, P, exec) / count;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        s[j] = std::isfinite(s[j]) ? std::max(s[j], kSigmaFloor) : kSigmaFloor;
    }
    return s;
}

double emission_fit_per_obs(const EmissionSuffStats& stats, const std::vector<Matrix>& P, const Vector& sigma2,
                            int L)
{
    const Vector r = residual_sums(stats, P, Exec::serial);
    double total = 0.0;
    for (Eigen::Index j = 0; j < r.size(); ++j) {
        total += -0.5 * L * std::log(sigma2[j]) - 0.5 * r[j] / sigma2[j];
    }
    return total / L;
}

StaticParams initial_statics(const ModelConfig& config, const Matrix& ys, const StreamKey& key)
{
    config.validate();
    if (ys.cols() != config.d || ys.rows() < 1) {
        throw InvalidArgument(fmt::format("initial_statics: data has {} columns, config has d={}", ys.cols(),
                                          config.d));
    }
    const Vector mean = ys.colwise().mean().transpose();
    Vector var(config.d);
    for (int j = 0; j < config.d; ++j) {
        const double n = static_cast<double>(ys.rows());
        var[j] = (ys.col(j).array() - mean[j]).square().sum() / std::max(n - 1.0, 1.0);
        if (!(var[j] > 0.0)) {
            var[j] = 1.0;
        }
    }
    std::vector<OuParams> experts;
    for (int m = 0; m < config.M; ++m) {
        const double frac = config.M == 1 ? 0.5 : static_cast<double>(m) / (config.M - 1);
        const double b = 0.05 * std::pow(2.0 / 0.05, frac);
        experts.push_back(OuParams::isotropic(config.K, b, 0.0, 1.0));
    }
    auto rng = key.child(tags::em_init).stream();
    std::vector<Matrix> P;
    for (int m = 0; m < config.M; ++m) {
        Matrix p(config.d, config.K);
        for (int j = 0; j < config.d; ++j) {
            const double sd = std::sqrt(var[j] / config.latent_dim());
            for (int k = 0; k < config.K; ++k) {
                p(j, k) = sd * rng.normal();
            }
        }
        P.push_back(std::move(p));
    }
    StaticParams s{std::move(experts), OuParams::isotropic(config.M, 1.0, 0.0, 1.0), std::move(P),
                   (0.1 * var).cwiseMax(kSigmaFloor)};
    s.validate_against(config);
    return s;
}

EmBlockResult em_iteration_detailed(EmState& state, const Matrix& block_ys, const ModelConfig& config,
                                    const StreamKey& key, const EmOptions& options)
{
    const auto start = std::chrono::steady_clock::now();
    if (block_ys.rows() != config.L) {
        throw InvalidArgument(fmt::format("em_iteration: block has {} rows, L={}", block_ys.rows(), config.L));
    }
    state.statics.validate_against(config);
    const int k = state.k + 1;
    const double gamma = options.gamma_override.value_or(step_size(k, config.gamma_exponent));

    const auto trace = smc::run_filter(block_ys, state.statics, config, key, options.exec);
    auto trajectories = smc::backward_smooth(trace.clouds, state.statics, config, key.child(tags::smooth),
                                             options.exec, options.smoothed_draws);
    const SuffStats fresh = block_suff_stats(trajectories, block_ys, config.K);
    SuffStats stats = state.stats ? blend(*state.stats, fresh, gamma) : fresh;

    StaticParams next = state.statics;
    for (int m = 0; m < config.M; ++m) {
        OuUpdateInfo info;
        next.ou_x[static_cast<std::size_t>(m)] = update_ou_params(stats.ou_x[static_cast<std::size_t>(m)], config.dt,
                                                                  config.L, &info);
        state.counters.b_clamps += info.b_clamped;
        state.counters.S_floors += info.S_floored;
    }
    {
        OuUpdateInfo info;
        next.ou_z = update_ou_params(stats.ou_z, config.dt, config.L, &info);
        state.counters.b_clamps += info.b_clamped;
        state.counters.S_floors += info.S_floored;
    }
    next.P = update_projections(stats.emission, options.projection_prior_variance, config.K, options.exec);
    next.sigma2 = update_sigmas(stats.emission, next.P, config.L, options.exec);

    EmBlockResult result;
    auto& r = result.report;
    r.k = k;
    r.gamma = gamma;
    r.per_obs_loglik = emission_fit_per_obs(stats.emission, next.P, next.sigma2, config.L);
    r.per_obs_log_evidence = trace.total_log_evidence() / config.L;
    r.min_ess = *std::min_element(trace.ess.begin(), trace.ess.end());
    r.resample_count = static_cast<int>(std::count(trace.resampled.begin(), trace.resampled.end(), true));

    state.statics = std::move(next);
    state.stats = std::move(stats);
    state.k = k;
    result.trajectories = std::move(trajectories);
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return result;
}

EmIterationReport em_iteration(EmState& state, const Matrix& block_ys, const ModelConfig& config,
                               const StreamKey& key, const EmOptions& options)
{
    return em_iteration_detailed(state, block_ys, config, key, options).report;
}

void to_json(nlohmann::json& j, const OuSuffStats& s)
{
    j = {{"phi1", to_json_vector(s.phi1)}, {"phi2", to_json_matrix(s.phi2)}, {"phi3", to_json_vector(s.phi3)},
         {"phi4", to_json_vector(s.phi4)}, {"phi5", to_json_matrix(s.phi5)}, {"phi6", to_json_matrix(s.phi6)},
         {"phi7", to_json_matrix(s.phi7)}};
}

void to_json(nlohmann::json& j, const SuffStats& s)
{
    nlohmann::json A = nlohmann::json::array();
    for (const auto& a : s.emission.A) {
        A.push_back(to_json_matrix(a));
    }
    j = {{"ou_x", s.ou_x},
         {"ou_z", s.ou_z},
         {"emission", {{"A", A}, {"B", to_json_matrix(s.emission.B)}, {"ysq", to_json_vector(s.emission.ysq)}}},
         {"block_len", s.block_len}};
}

OuSuffStats ou_suff_stats_from_json(const nlohmann::json& j)
{
    return stats_from_json(j);
}

SuffStats suff_stats_from_json(const nlohmann::json& j)
{
    SuffStats s;
    for (const auto& x : j.at("ou_x")) {
        s.ou_x.push_back(stats_from_json(x));
    }
    s.ou_z = stats_from_json(j.at("ou_z"));
    const auto& e = j.at("emission");
    for (const auto& a : e.at("A")) {
        s.emission.A.push_back(matrix_from_json(a));
    }
    s.emission.B = matrix_from_json(e.at("B"));
    s.emission.ysq = vector_from_json(e.at("ysq"));
    s.block_len = j.at("block_len").get<int>();
    return s;
}

void save_checkpoint(const std::string& path, const EmState& state, const ModelConfig& config)
{
    nlohmann::json j;
    j["format"] = "pmlds-checkpoint";
    j["version"] = kCheckpointVersion;
    j["k"] = state.k;
    j["config"] = config;
    j["statics"] = state.statics;
    j["stats"] = state.stats ? nlohmann::json(*state.stats) : nlohmann::json(nullptr);
    j["counters"] = {{"b_clamps", state.counters.b_clamps}, {"S_floors", state.counters.S_floors}};
    io::write_json(path, j);
}

EmState load_checkpoint(const std::string& path, ModelConfig* config)
{
    const auto j = io::read_json(path);
    try {
        if (j.value("format", std::string{}) != "pmlds-checkpoint") {
            throw DataError(fmt::format("'{}' is not a checkpoint", path));
        }
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw DataError(fmt::format("checkpoint version {} is not supported (expected {})", version,
                                        kCheckpointVersion));
        }
        EmState state{static_params_from_json(j.at("statics")), std::nullopt, j.at("k").get<int>(), {}};
        if (!j.at("stats").is_null()) {
            state.stats = suff_stats_from_json(j.at("stats"));
        }
        if (j.contains("counters")) {
            state.counters.b_clamps = j["counters"].value("b_clamps", 0);
            state.counters.S_floors = j["counters"].value("S_floors", 0);
        }
        if (config) {
            *config = j.at("config").get<ModelConfig>();
        }
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed checkpoint '{}': {}", path, e.what()));
    }
}

}  // namespace pmlds::em
