#pragma once

#include <string>
#include <vector>

#include "pmlds/core.hpp"
#include "pmlds/membership.hpp"
#include "pmlds/ou.hpp"
#include "pmlds/parallel.hpp"
#include "pmlds/random.hpp"

namespace pmlds::smc {

struct Particle {
    LatentState state;
    double log_weight = 0.0;
};

struct ParticleCloud {
    std::vector<Particle> particles;
    bool normalized = false;

    [[nodiscard]] std::size_t size() const { return particles.size(); }
    /// Normalizes in log space (max-shifted) and returns the log of the
    /// pre-normalization weight sum. Throws DegenerateCloud if all weights are
    /// zero.
    double normalize();
    /// 1 / sum W_i^2 of the normalized weights.
    [[nodiscard]] double ess() const;
    [[nodiscard]] std::vector<double> log_weights() const;
    /// Weighted mean of the stacked experts X.
    [[nodiscard]] Vector mean_X() const;
};

/// Transition kernels for one (statics, dt) pair: the per-expert OU
/// propagators, the membership propagator and the block-diagonal S_X.
class TransitionModel {
public:
    TransitionModel(const StaticParams& statics, double dt);

    [[nodiscard]] Vector mean_X(const Vector& X_prev) const;
    [[nodiscard]] const Matrix& S_X() const { return S_X_; }
    [[nodiscard]] const std::vector<ou::Propagator>& experts() const { return x_; }
    [[nodiscard]] const ou::Propagator& membership() const { return z_; }
    /// log p(X_t, zhat_t | X_{t-1}, zhat_{t-1}); product of the expert and
    /// membership transition densities.
    [[nodiscard]] double log_density(const LatentState& prev, const LatentState& next) const;
    [[nodiscard]] int K() const { return K_; }

private:
    std::vector<ou::Propagator> x_;
    ou::Propagator z_;
    Matrix S_X_;
    int K_;
};

/// Locally optimal Gaussian proposal for X_t given z_t:
///   S_bar  = (S_X^{-1} + W^T Sigma^{-1} W)^{-1}
///   mu_bar = S_bar (S_X^{-1} mu_t + W^T Sigma^{-1} y)
Gaussian optimal_proposal(const Vector& mu_t, const Matrix& S_X, const Matrix& W, const Vector& y,
                          const Vector& sigma2);

/// Same, building mu_t, S_X and W from the statics.
Gaussian optimal_proposal(const Vector& x_prev, const Weights& z, const Vector& y, const StaticParams& statics,
                          double dt);

/// log u_t = 1/2 log|S_bar| + 1/2 mu_bar^T S_bar^{-1} mu_bar - 1/2 mu^T S_X^{-1} mu.
/// Constants common to all particles are omitted.
double incremental_weight(const Vector& mu_t, const Vector& mu_bar, const Matrix& S_X, const Matrix& S_bar);

/// Particle-independent terms dropped by incremental_weight(); adding them
/// turns log u_t into log p(y_t | X_{t-1}, z_t).
double evidence_constant(const Matrix& S_X, const Vector& y, const Vector& sigma2);

struct StepResult {
    ParticleCloud weighted;  // normalized, before resampling
    ParticleCloud next;      // resampled when ess < ess_min_fraction * N
    double ess = 0.0;
    double log_evidence_increment = 0.0;  // log p(y_t | y_{1:t-1})
    bool resampled = false;
};

/// First step of a block: zhat ~ stationary, X from the stationary prior
/// conditioned on y1.
StepResult init_cloud(const StaticParams& statics, const Vector& y1, const ModelConfig& config,
                      const StreamKey& key, Exec exec = Exec::parallel);

/// One SMC step: zhat from its OU prior, X from the locally optimal
/// proposal, weights updated by u_t, multinomial resampling below the ESS
/// threshold.
StepResult filter_step(const ParticleCloud& cloud, const Vector& y, const StaticParams& statics,
                       const ModelConfig& config, const StreamKey& key, Exec exec = Exec::parallel);

/// Indices drawn with probability proportional to exp(log_weights).
std::vector<int> multinomial_resample(const std::vector<double>& log_weights, int n, RandomStream& rng);

struct FilterTrace {
    std::vector<ParticleCloud> clouds;  // weighted clouds, one per step
    std::vector<double> ess;
    std::vector<double> log_evidence;
    std::vector<bool> resampled;
    ParticleCloud last;  // cloud to continue from

    [[nodiscard]] double total_log_evidence() const;
};

/// Filters rows of ys (time x d) starting from the stationary prior.
FilterTrace run_filter(const Matrix& ys, const StaticParams& statics, const ModelConfig& config,
                       const StreamKey& key, Exec exec = Exec::parallel);

/// Continues an existing cloud through the rows of ys.
FilterTrace continue_filter(const ParticleCloud& start, const Matrix& ys, const StaticParams& statics,
                            const ModelConfig& config, const StreamKey& key, Exec exec = Exec::parallel);

using Trajectory = std::vector<LatentState>;

/// Backward-simulation smoother. Draws n_out equally weighted trajectories
/// (n_out < 0 means one per particle) from the stored filtering clouds at
/// O(n_out * N * L) cost.
std::vector<Trajectory> backward_smooth(const std::vector<ParticleCloud>& clouds, const StaticParams& statics,
                                        const ModelConfig& config, const StreamKey& key,
                                        Exec exec = Exec::parallel, int n_out = -1);

/// Per-step diagnostics as CSV: t, ess, log_evidence_increment.
void write_diagnostics_csv(const std::string& path, const FilterTrace& trace);

}  // namespace pmlds::smc
