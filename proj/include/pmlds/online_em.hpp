#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pmlds/core.hpp"
#include "pmlds/parallel.hpp"
#include "pmlds/random.hpp"
#include "pmlds/smc.hpp"

namespace pmlds::em {

/// Expected sufficient statistics of one OU process over a block:
///   phi1 = <x_1>                        phi2 = <x_1 x_1^T>
///   phi3 = <sum x_{t-1}>                phi4 = <sum (x_t - x_{t-1})>
///   phi5 = <sum x_{t-1} x_{t-1}^T>      phi6 = <sum (x_t - x_{t-1}) x_{t-1}^T>
///   phi7 = <sum (x_t - x_{t-1})(x_t - x_{t-1})^T>
/// with sums over t = 2..L.
struct OuSuffStats {
    Vector phi1;
    Matrix phi2;
    Vector phi3;
    Vector phi4;
    Matrix phi5;
    Matrix phi6;
    Matrix phi7;

    static OuSuffStats zeros(int n);
};

/// Emission statistics. A[m] = <sum_t z_{t,m} y_t x_t^(m)T> (d x K);
/// B is the stacked (M K) x (M K) matrix of blocks
/// B^(n,m) = <sum_t z_{t,n} z_{t,m} x_t^(n) x_t^(m)T>; ysq_j = sum_t y_{t,j}^2.
struct EmissionSuffStats {
    std::vector<Matrix> A;
    Matrix B;
    Vector ysq;

    [[nodiscard]] Matrix block(int n, int m, int K) const { return B.block(n * K, m * K, K, K); }
    /// [A^(1) ... A^(M)], d x (M K); row j is A_j.
    [[nodiscard]] Matrix stacked_A() const;
};

struct SuffStats {
    std::vector<OuSuffStats> ou_x;
    OuSuffStats ou_z;
    EmissionSuffStats emission;
    int block_len = 0;
};

/// Monte Carlo averages over equally weighted smoothed trajectories.
SuffStats block_suff_stats(const std::vector<smc::Trajectory>& trajectories, const Matrix& block_ys, int K);

/// Statistics of a single path, one state per time step.
OuSuffStats ou_suff_stats(const std::vector<Vector>& path);

/// gamma_k = k^{-a}.
double step_size(int k, double a);

/// (1 - gamma) prev + gamma next, field by field.
SuffStats blend(const SuffStats& prev, const SuffStats& next, double gamma);
SuffStats blend(const SuffStats& prev, const SuffStats& next, int k, double a);

/// Expected complete-data log-density of a block (up to -n L/2 log 2 pi):
/// stationary term for x_1 plus L-1 exact transition terms.
double ou_expected_loglik(const OuSuffStats& stats, const OuParams& params, double dt, int L);

struct OuUpdateInfo {
    bool b_clamped = false;
    bool S_floored = false;
    int evaluations = 0;
};

/// Maximizes ou_expected_loglik over (b, q, S). For a fixed b the optimal q
/// and S are closed form, so the search runs over the concentrated objective
/// in log b (grid bracket followed by Brent refinement).
OuParams update_ou_params(const OuSuffStats& stats, double dt, int L, OuUpdateInfo* info = nullptr);

/// Closed-form q and S for a fixed b.
std::pair<Vector, Matrix> ou_optimal_q_S(const OuSuffStats& stats, double b, double dt, int L);

/// Row-wise P_j = A_j (B + I / prior_variance)^{-1}, one factorization for
/// all rows. prior_variance <= 0 or infinite disables the prior.
std::vector<Matrix> update_projections(const EmissionSuffStats& stats, double prior_variance, int K,
                                       Exec exec = Exec::parallel);

/// L sigma_j^2 = ysq_j - 2 A_j P_j^T + P_j B P_j^T, floored at 1e-12.
Vector update_sigmas(const EmissionSuffStats& stats, const std::vector<Matrix>& P, double count,
                     Exec exec = Exec::parallel);

inline constexpr double kSigmaFloor = 1e-12;
inline constexpr double kProjectionPriorVariance = 100.0;

/// Expected emission log-likelihood per observation,
///   (1/L) <sum_t -1/2 log|Sigma| - 1/2 r_t^T Sigma^{-1} r_t>,  r_t = y_t - W_t X_t,
/// with the (2 pi)^{-d/2} factor dropped.
double emission_fit_per_obs(const EmissionSuffStats& stats, const std::vector<Matrix>& P, const Vector& sigma2,
                            int L);

struct EmOptions {
    double projection_prior_variance = kProjectionPriorVariance;
    /// Forces gamma_k; used to freeze the statistics in tests.
    std::optional<double> gamma_override;
    /// Smoothed trajectories per block; < 0 means N.
    int smoothed_draws = -1;
    Exec exec = Exec::parallel;
};

struct EmIterationReport {
    int k = 0;
    double gamma = 0.0;
    double per_obs_loglik = 0.0;       // emission_fit_per_obs after the M-step
    double per_obs_log_evidence = 0.0; // SMC estimate of log p(y_block) / L
    double min_ess = 0.0;
    int resample_count = 0;
    double wall_ms = 0.0;
};

struct EmCounters {
    int b_clamps = 0;
    int S_floors = 0;
};

struct EmState {
    StaticParams statics;
    std::optional<SuffStats> stats;
    int k = 0;
    EmCounters counters;
};

/// Data-driven starting point: q = 0, b log-spaced in [0.05, 2], S = I,
/// ou_z = (1, 0, I), P_jk ~ N(0, var(y_j) / (M K)), sigma2_j = 0.1 var(y_j).
StaticParams initial_statics(const ModelConfig& config, const Matrix& ys, const StreamKey& key);

/// One online EM iteration on a block of exactly L rows: filter, smooth,
/// block statistics, blend with gamma_k, M-step.
EmIterationReport em_iteration(EmState& state, const Matrix& block_ys, const ModelConfig& config,
                               const StreamKey& key, const EmOptions& options = {});

/// Result of em_iteration plus the smoothed trajectories, for callers that
/// need posterior summaries of the block.
struct EmBlockResult {
    EmIterationReport report;
    std::vector<smc::Trajectory> trajectories;
};

EmBlockResult em_iteration_detailed(EmState& state, const Matrix& block_ys, const ModelConfig& config,
                                    const StreamKey& key, const EmOptions& options = {});

void to_json(nlohmann::json& j, const OuSuffStats& s);
void to_json(nlohmann::json& j, const SuffStats& s);
OuSuffStats ou_suff_stats_from_json(const nlohmann::json& j);
SuffStats suff_stats_from_json(const nlohmann::json& j);

/// Versioned JSON checkpoint: statics, blended statistics, k, config.
void save_checkpoint(const std::string& path, const EmState& state, const ModelConfig& config);
EmState load_checkpoint(const std::string& path, ModelConfig* config = nullptr);

}  // namespace pmlds::em
