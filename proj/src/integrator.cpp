#include "pmlds/integrator.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pmlds::integrator {

HeatFineStepper::HeatFineStepper(const finescale::HeatProblem& problem) : stepper_(problem), u_(problem.u0)
{
    u_[0] = 0.0;
    u_[u_.size() - 1] = 0.0;
}

void HeatFineStepper::set_state(const Vector& u)
{
    if (u.size() != u_.size()) {
        throw InvalidArgument(fmt::format("heat state has {} entries, expected {}", u.size(), u_.size()));
    }
    u_ = u;
    u_[0] = 0.0;
    u_[u_.size() - 1] = 0.0;
}

void IntegrationSchedule::validate(int block_len) const
{
    if (burst_len < 1 || block_len < 1 || burst_len % block_len != 0) {
        throw InvalidArgument(fmt::format("burst length {} must be a positive multiple of the block length {}",
                                          burst_len, block_len));
    }
    if (leap_len < 0) {
        throw InvalidArgument("leap length must be >= 0");
    }
    if (tolerance && !(*tolerance > 0.0)) {
        throw InvalidArgument("tolerance must be positive");
    }
    if (!(max_time > 0.0)) {
        throw InvalidArgument("max_time must be positive");
    }
}

double IntegrationReport::speedup() const
{
    return fine_steps > 0 ? static_cast<double>(total_steps) / static_cast<double>(fine_steps) : 0.0;
}

namespace {

struct SnapshotPlan {
    std::vector<std::pair<double, long>> wanted;  // (time, step), sorted by step
    std::size_t next = 0;

    [[nodiscard]] bool due(long step) const { return next < wanted.size() && wanted[next].second == step; }
};

Snapshot fine_snapshot(double time, long step, const Vector& u)
{
    return {time, step, false, u, u, u, u, std::nullopt};
}

}  // namespace

IntegrationReport run_adaptive(FineStepper& stepper, const IntegrationSchedule& schedule, const ModelConfig& config,
                               const StreamKey& key, const IntegratorOptions& options, const ExactSolution& exact)
{
    config.validate();
    schedule.validate(config.L);
    const double dt = stepper.dt();
    const int d = static_cast<int>(stepper.state().size());
    const bool interior = options.exclude_boundary;
    if (interior && d < 3) {
        throw InvalidArgument("excluding the boundary needs at least three fine-state entries");
    }
    const int d_model = interior ? d - 2 : d;
    if (d_model != config.d) {
        throw InvalidArgument(fmt::format("fine state has {} entries{}, config has d={}", d,
                                          interior ? " (boundary excluded)" : "", config.d));
    }
    auto to_fine = [&](const Vector& v) -> Vector {
        if (!interior) {
            return v;
        }
        Vector out = Vector::Zero(d);
        out.segment(1, d - 2) = v;
        return out;
    };

    IntegrationReport rep;
    rep.dt = dt;
    rep.total_steps = std::lround(schedule.max_time / dt);

    SnapshotPlan plan;
    for (double t : options.snapshot_times) {
        const long s = std::lround(t / dt);
        if (s >= 0 && s <= rep.total_steps) {
            plan.wanted.emplace_back(t, s);
        }
    }
    std::sort(plan.wanted.begin(), plan.wanted.end(), [](const auto& a, const auto& b) { return a.second < b.second; });

    auto attach_exact = [&](Snapshot& snap) {
        if (exact) {
            snap.exact = exact(snap.step);
        }
    };

    long step = 0;
    while (plan.due(0)) {
        auto snap = fine_snapshot(plan.wanted[plan.next].first, 0, stepper.state());
        attach_exact(snap);
        rep.snapshots.push_back(std::move(snap));
        ++plan.next;
    }

    const bool leaping = schedule.leap_len > 0 || schedule.tolerance.has_value();
    std::optional<em::EmState> em_state;
    int cycle = 0;
    bool force_fine = false;

    while (step < rep.total_steps) {
        const StreamKey cycle_key = key.child(static_cast<std::uint64_t>(cycle));
        ++cycle;

        // Fine burst.
        const long burst = std::min<long>(schedule.burst_len, rep.total_steps - step);
        Matrix ys(burst, d);
        for (long i = 0; i < burst; ++i) {
            stepper.step();
            ++step;
            ++rep.fine_steps;
            ys.row(i) = stepper.state().transpose();
            while (plan.due(step)) {
                auto snap = fine_snapshot(plan.wanted[plan.next].first, step, stepper.state());
                attach_exact(snap);
                rep.snapshots.push_back(std::move(snap));
                ++plan.next;
            }
        }
        if (!leaping || step >= rep.total_steps || burst < config.L) {
            continue;
        }
        if (force_fine) {
            force_fine = false;
            continue;
        }

        try {
            // Model update on the burst's blocks.
            const Matrix train = interior ? Matrix(ys.middleCols(1, d - 2)) : ys;
            if (!em_state) {
                em_state = em::EmState{em::initial_statics(config, train, cycle_key), std::nullopt, 0, {}};
            }
            for (long b = 0; b + config.L <= burst; b += config.L) {
                const auto res = em::em_iteration_detailed(*em_state, train.middleRows(b, config.L), config,
                                                           cycle_key.child(tags::filter, static_cast<std::uint64_t>(b)),
                                                           options.em);
                rep.em_log.push_back(res.report);
            }

            // Filter the burst with the updated statics and leap.
            const auto trace = smc::run_filter(train, em_state->statics, config, cycle_key.child(tags::init),
                                               options.exec);
            const long remaining = rep.total_steps - step;
            int horizon = static_cast<int>(std::min<long>(schedule.leap_len > 0 ? schedule.leap_len : remaining,
                                                          remaining));
            prediction::PredictOptions popt;
            popt.n_draws = options.n_draws;
            popt.exec = options.exec;
            auto pred = prediction::predict(trace.last, em_state->statics, config.dt, horizon,
                                            cycle_key.child(tags::predict), popt);
            if (schedule.tolerance) {
                int ok = 0;
                while (ok < horizon && pred.band_width(ok + 1) <= *schedule.tolerance) {
                    ++ok;
                }
                if (ok == 0) {
                    const auto msg = fmt::format("step {}: predictive band exceeds tolerance after one step; "
                                                 "running one more fine burst",
                                                 step);
                    spdlog::warn("{}", msg);
                    rep.warnings.push_back(msg);
                    force_fine = true;
                    continue;
                }
                horizon = ok;
            }

            LeapRecord leap{step, horizon, pred.band_width(horizon), std::nullopt};
            const Matrix& q05 = pred.quantile(0.05);
            const Matrix& q50 = pred.quantile(0.5);
            const Matrix& q95 = pred.quantile(0.95);
            while (plan.next < plan.wanted.size() && plan.wanted[plan.next].second <= step + horizon) {
                const auto [time, s] = plan.wanted[plan.next];
                const auto row = static_cast<Eigen::Index>(s - step - 1);
                Snapshot snap{time,
                              s,
                              true,
                              to_fine(pred.mean.row(row).transpose()),
                              to_fine(q05.row(row).transpose()),
                              to_fine(q50.row(row).transpose()),
                              to_fine(q95.row(row).transpose()),
                              std::nullopt};
                attach_exact(snap);
                rep.snapshots.push_back(std::move(snap));
                ++plan.next;
            }

            const Vector end_mean = to_fine(pred.mean.row(horizon - 1).transpose());
            if (exact) {
                const Vector ex = exact(step + horizon);
                const double nrm = ex.norm();
                leap.rel_error = nrm > 0.0 ? (end_mean - ex).norm() / nrm : (end_mean - ex).norm();
            }
            if (options.reinit_from_sample) {
                prediction::PredictOptions one;
                one.n_draws = 1;
                one.levels = {0.5};
                one.exec = options.exec;
                const auto draw = prediction::predict(trace.last, em_state->statics, config.dt, horizon,
                                                      cycle_key.child(tags::predict, 1), one);
                stepper.set_state(to_fine(draw.quantile(0.5).row(horizon - 1).transpose()));
            } else {
                stepper.set_state(end_mean);
            }
            step += horizon;
            rep.leaped_steps += horizon;
            rep.leaps.push_back(leap);
        } catch (const NumericalError& e) {
            rep.truncated = true;
            rep.diagnostics = fmt::format("step {}: {}", step, e.what());
            spdlog::error("integration truncated at {}", rep.diagnostics);
            break;
        }
    }
    return rep;
}

ReferenceSolution::ReferenceSolution(const finescale::HeatProblem& problem) : stepper_(problem), u_(problem.u0)
{
    u_[0] = 0.0;
    u_[u_.size() - 1] = 0.0;
}

Vector ReferenceSolution::at(long step)
{
    if (step < step_) {
        u_ = stepper_.problem().u0;
        u_[0] = 0.0;
        u_[u_.size() - 1] = 0.0;
        step_ = 0;
    }
    while (step_ < step) {
        u_ = stepper_.step(u_);
        ++step_;
    }
    return u_;
}

void to_json(nlohmann::json& j, const IntegrationReport& r)
{
    nlohmann::json leaps = nlohmann::json::array();
    for (const auto& l : r.leaps) {
        nlohmann::json e = {{"start_step", l.start_step}, {"length", l.length}, {"band_width", l.band_width}};
        e["rel_error"] = l.rel_error ? nlohmann::json(*l.rel_error) : nlohmann::json(nullptr);
        leaps.push_back(e);
    }
    nlohmann::json snaps = nlohmann::json::array();
    for (const auto& s : r.snapshots) {
        snaps.push_back({{"time", s.time}, {"step", s.step}, {"predicted", s.predicted}});
    }
    nlohmann::json em = nlohmann::json::array();
    for (const auto& e : r.em_log) {
        em.push_back({{"k", e.k},
                      {"gamma", e.gamma},
                      {"per_obs_loglik", e.per_obs_loglik},
                      {"per_obs_log_evidence", e.per_obs_log_evidence},
                      {"min_ess", e.min_ess},
                      {"resample_count", e.resample_count},
                      {"wall_ms", e.wall_ms}});
    }
    j = {{"total_steps", r.total_steps},
         {"fine_steps", r.fine_steps},
         {"leaped_steps", r.leaped_steps},
         {"dt", r.dt},
         {"simulated_time", r.simulated_time()},
         {"speedup", r.speedup()},
         {"leaps", leaps},
         {"snapshots", snaps},
         {"em_log", em},
         {"warnings", r.warnings},
         {"truncated", r.truncated},
         {"diagnostics", r.diagnostics}};
}

}  // namespace pmlds::integrator
