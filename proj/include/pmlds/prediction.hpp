#pragma once

#include <map>
#include <string>

#include "pmlds/core.hpp"
#include "pmlds/parallel.hpp"
#include "pmlds/random.hpp"
#include "pmlds/smc.hpp"

namespace pmlds::prediction {

/// Per-coordinate summary of the predictive posterior over a horizon.
/// Row t - 1 of each matrix holds step tau + t.
struct PredictiveSummary {
    int horizon = 0;
    Matrix mean;                      // mean of the noiseless emission W_t X_t
    std::map<double, Matrix> quantiles;  // level -> T x d, emission noise included
    int samples_kept = 0;
    /// Mean latent state at the horizon end, for reinitialization.
    LatentState final_mean;

    [[nodiscard]] const Matrix& quantile(double level) const;
    /// Mean over coordinates of q_hi - q_lo at step t (1-based).
    [[nodiscard]] double band_width(int t, double lo = 0.05, double hi = 0.95) const;
};

struct PredictOptions {
    int n_draws = 500;
    std::vector<double> levels{0.05, 0.5, 0.95};
    Exec exec = Exec::parallel;
};

/// Draws particles by weight and propagates (X, zhat) forward T steps with
/// exact OU transitions; empirical quantiles per coordinate and step.
PredictiveSummary predict(const smc::ParticleCloud& cloud, const StaticParams& statics, double dt, int T,
                          const StreamKey& key, const PredictOptions& options = {});

/// log of the weighted Monte Carlo average of p(y_next | propagated state).
/// Particle i receives a share of the n_draws propagations and W_i is split
/// evenly between them. Returns -inf when every term underflows.
double one_step_pred_loglik(const smc::ParticleCloud& cloud, const Vector& y_next, const StaticParams& statics,
                            double dt, int n_draws, const StreamKey& key, Exec exec = Exec::parallel);

/// Empirical quantile with linear interpolation between order statistics.
double empirical_quantile(std::vector<double>& values, double level);

/// CSV rows (t, j, mean, q05, q50, q95) preceded by a '#'-comment echoing
/// the config as JSON.
void write_prediction_csv(const std::string& path, const PredictiveSummary& summary,
                          const nlohmann::json& config_echo);

}  // namespace pmlds::prediction
