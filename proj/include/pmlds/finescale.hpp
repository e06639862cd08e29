#pragma once

#include <vector>

#include "pmlds/core.hpp"
#include "pmlds/random.hpp"

namespace pmlds::finescale {

/// Generative settings for the synthetic PMLDS data set.
struct SyntheticConfig {
    int d = 10;
    double dt = 1.0;
    std::vector<OuParams> experts;
    OuParams membership;
    double projection_variance = 100.0;
    double noise_variance = 0.01;

    /// M = 2, K = 1: (0.1, -5, 0.2) slow and (1, 5, 2) fast experts,
    /// membership driver (1, 0, 10 I), P ~ N(0, 100 I), Sigma = 0.1^2 I, dt = 1.
    static SyntheticConfig defaults();
};

struct SyntheticData {
    Matrix ys;                        // T x d observations
    Matrix signal;                    // T x d noiseless emission means
    std::vector<LatentState> latent;  // T states
    StaticParams truth;
};

/// Samples projections from N(0, projection_variance) and runs the model.
SyntheticData generate_synthetic(const SyntheticConfig& config, int T_total, const StreamKey& key);

/// Runs the generative model for known statics. The initial state is drawn
/// from the stationary law unless `start` is given.
SyntheticData simulate(const StaticParams& statics, double dt, int T_total, const StreamKey& key,
                       const LatentState* start = nullptr);

/// 1D transient heat problem u_t = (a(x) u_x)_x on [0, 1], u(0) = u(1) = 0,
/// linear elements on a uniform mesh.
struct HeatProblem {
    int n_elements = 1000;
    Vector conductivity;  // per element
    double dt_fine = 1e-4;
    Vector u0;            // nodal, n_elements + 1
    bool lumped_mass = false;

    [[nodiscard]] int n_nodes() const { return n_elements + 1; }
    [[nodiscard]] Vector nodes() const;
    void validate() const;
};

/// Conductivity U[0.01, 0.1] on [0, 0.5] and U[0.51, 0.6] on (0.5, 1];
/// u0(x_i) = 10 x_i (1 - x_i)(1 + 0.1 Z_i); dt = 1e-4.
HeatProblem build_heat_problem(const StreamKey& key, int n_elements = 1000);

/// Backward Euler on the semi-discrete system M u' + K u = 0 over the
/// interior nodes. The tridiagonal system (M + dt K) is factorized once.
class HeatStepper {
public:
    explicit HeatStepper(const HeatProblem& problem);

    [[nodiscard]] Vector step(const Vector& u) const;
    [[nodiscard]] const HeatProblem& problem() const { return problem_; }

private:
    HeatProblem problem_;
    // Interior system, Thomas factorization: diag_ holds the pivots and
    // lower_ the multipliers of (M + dt K).
    Vector diag_;
    Vector lower_;
    Vector upper_;
    // Mass matrix (tridiagonal) for the right-hand side.
    Vector mass_diag_;
    Vector mass_off_;
};

/// One implicit step; convenience wrapper that factorizes on every call.
Vector heat_step(const Vector& state, const HeatProblem& problem);

}  // namespace pmlds::finescale
