#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pmlds/core.hpp"
#include "pmlds/finescale.hpp"
#include "pmlds/online_em.hpp"
#include "pmlds/prediction.hpp"

namespace pmlds::integrator {

/// In-process fine-scale model driven by the integrator.
class FineStepper {
public:
    virtual ~FineStepper() = default;
    [[nodiscard]] virtual const Vector& state() const = 0;
    /// Replaces the state; implementations re-impose their constraints.
    virtual void set_state(const Vector& u) = 0;
    virtual void step() = 0;
    [[nodiscard]] virtual double dt() const = 0;
};

class HeatFineStepper final : public FineStepper {
public:
    explicit HeatFineStepper(const finescale::HeatProblem& problem);

    [[nodiscard]] const Vector& state() const override { return u_; }
    void set_state(const Vector& u) override;
    void step() override { u_ = stepper_.step(u_); }
    [[nodiscard]] double dt() const override { return stepper_.problem().dt_fine; }

private:
    finescale::HeatStepper stepper_;
    Vector u_;
};

struct IntegrationSchedule {
    int burst_len = 20;
    int leap_len = 500;
    /// Max mean 5-95% band width allowed at the end of a leap.
    std::optional<double> tolerance;
    double max_time = 1.0;

    void validate(int block_len) const;
};

struct IntegratorOptions {
    std::vector<double> snapshot_times;
    int n_draws = 500;
    /// Reinitialize from one predictive draw instead of the mean.
    bool reinit_from_sample = false;
    /// Train and predict on interior nodes only; the first and last entries
    /// of the fine state are pinned to zero in every reported vector.
    bool exclude_boundary = false;
    em::EmOptions em;
    Exec exec = Exec::parallel;
};

struct LeapRecord {
    long start_step = 0;
    int length = 0;
    double band_width = 0.0;
    std::optional<double> rel_error;  // posterior mean vs exact at the leap end
};

struct Snapshot {
    double time = 0.0;
    long step = 0;
    bool predicted = false;  // false: the fine model was running at this step
    Vector mean;
    Vector q05;
    Vector q50;
    Vector q95;
    std::optional<Vector> exact;
};

struct IntegrationReport {
    long total_steps = 0;
    long fine_steps = 0;
    long leaped_steps = 0;
    double dt = 0.0;
    std::vector<LeapRecord> leaps;
    std::vector<Snapshot> snapshots;
    std::vector<em::EmIterationReport> em_log;
    std::vector<std::string> warnings;
    bool truncated = false;
    std::string diagnostics;

    [[nodiscard]] double speedup() const;
    [[nodiscard]] double simulated_time() const { return static_cast<double>(fine_steps + leaped_steps) * dt; }
};

/// Exact (fine-only) solution at a given step, when available.
using ExactSolution = std::function<Vector(long step)>;

/// Alternates fine bursts, online EM updates on the burst's blocks and
/// predictive leaps, reinitializing the fine model from the predictive mean.
IntegrationReport run_adaptive(FineStepper& stepper, const IntegrationSchedule& schedule,
                               const ModelConfig& config, const StreamKey& key,
                               const IntegratorOptions& options = {}, const ExactSolution& exact = {});

/// Caches a forward fine-only run so exact values can be queried in
/// increasing step order.
class ReferenceSolution {
public:
    explicit ReferenceSolution(const finescale::HeatProblem& problem);
    Vector at(long step);

private:
    finescale::HeatStepper stepper_;
    Vector u_;
    long step_ = 0;
};

void to_json(nlohmann::json& j, const IntegrationReport& report);

}  // namespace pmlds::integrator
