#include "pmlds/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pmlds/emission.hpp"
#include "pmlds/io.hpp"
#include "pmlds/linalg.hpp"

namespace pmlds::prediction {

namespace {

/// Cumulative weights for drawing particles.
std::vector<double> cumulative_weights(const smc::ParticleCloud& cloud)
{
    if (cloud.particles.empty()) {
        throw InvalidArgument("empty particle cloud");
    }
    const auto lw = cloud.log_weights();
    const double mx = *std::max_element(lw.begin(), lw.end());
    if (!std::isfinite(mx)) {
        throw DegenerateCloud("prediction from a cloud with zero total weight");
    }
    std::vector<double> cum(lw.size());
    double total = 0.0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
        total += std::exp(lw[i] - mx);
        cum[i] = total;
    }
    for (auto& c : cum) {
        c /= total;
    }
    return cum;
}

std::size_t pick(const std::vector<double>& cum, double u)
{
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
}

LatentState propagate(const smc::TransitionModel& model, const LatentState& s, RandomStream& rng)
{
    LatentState out;
    out.zhat = model.membership().sample(s.zhat, rng);
    out.X.resize(s.X.size());
    const int K = model.K();
    for (std::size_t m = 0; m < model.experts().size(); ++m) {
        const auto at = static_cast<Eigen::Index>(m) * K;
        out.X.segment(at, K) = model.experts()[m].sample(s.X.segment(at, K), rng);
    }
    return out;
}

}  // namespace

const Matrix& PredictiveSummary::quantile(double level) const
{
    for (const auto& [l, q] : quantiles) {
        if (std::abs(l - level) < 1e-12) {
            return q;
        }
    }
    throw InvalidArgument(fmt::format("quantile level {} was not computed", level));
}

double PredictiveSummary::band_width(int t, double lo, double hi) const
{
    if (t < 1 || t > horizon) {
        throw InvalidArgument(fmt::format("band_width: step {} outside 1..{}", t, horizon));
    }
    return (quantile(hi).row(t - 1) - quantile(lo).row(t - 1)).mean();
}

double empirical_quantile(std::vector<double>& values, double level)
{
    if (values.empty()) {
        throw InvalidArgument("empirical_quantile: no values");
    }
    if (!(level >= 0.0 && level <= 1.0)) {
        throw InvalidArgument("empirical_quantile: level must lie in [0, 1]");
    }
    const double h = level * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    if (lo + 1 >= values.size()) {
        return a;
    }
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return a + (h - static_cast<double>(lo)) * (b - a);
}

PredictiveSummary predict(const smc::ParticleCloud& cloud, const StaticParams& statics, double dt, int T,
                          const StreamKey& key, const PredictOptions& options)
{
    if (T < 0) {
        throw InvalidArgument("predict: horizon must be >= 0");
    }
    if (options.n_draws < 1) {
        throw InvalidArgument("predict: n_draws must be >= 1");
    }
    statics.validate();
    const auto cum = cumulative_weights(cloud);
    const smc::TransitionModel model(statics, dt);
    const int d = statics.d();
    const int R = options.n_draws;

    PredictiveSummary out;
    out.horizon = T;
    out.samples_kept = R;
    out.mean = Matrix::Zero(T, d);
    for (double l : options.levels) {
        out.quantiles.emplace(l, Matrix::Zero(T, d));
    }

    std::vector<LatentState> states(static_cast<std::size_t>(R));
    std::vector<RandomStream> streams;
    streams.reserve(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
        streams.push_back(key.stream(static_cast<std::uint64_t>(r)));
        const auto i = pick(cum, streams.back().uniform());
        states[static_cast<std::size_t>(r)] = cloud.particles[i].state;
    }

    Matrix means(R, d);
    Matrix noisy(R, d);
    const Vector sd = statics.sigma2.cwiseSqrt();
    for (int t = 0; t < T; ++t) {
        for_each_index(options.exec, R, [&](std::ptrdiff_t r) {
            auto& s = states[static_cast<std::size_t>(r)];
            auto& rng = streams[static_cast<std::size_t>(r)];
            s = propagate(model, s, rng);
            const Vector mu = emission::mean(to_simplex(s.zhat), statics.P, s.X);
            means.row(r) = mu.transpose();
            for (int j = 0; j < d; ++j) {
                noisy(r, j) = mu[j] + sd[j] * rng.normal();
            }
        });
        out.mean.row(t) = means.colwise().mean();
        for_each_index(options.exec, d, [&](std::ptrdiff_t j) {
            std::vector<double> col(noisy.col(j).data(), noisy.col(j).data() + R);
            for (auto& [level, q] : out.quantiles) {
                q(t, j) = empirical_quantile(col, level);
            }
        });
    }

    out.final_mean.X = Vector::Zero(statics.M() * statics.K());
    out.final_mean.zhat = Vector::Zero(statics.M());
    for (const auto& s : states) {
        out.final_mean.X += s.X;
        out.final_mean.zhat += s.zhat;
    }
    out.final_mean.X /= R;
    out.final_mean.zhat /= R;
    return out;
}

double one_step_pred_loglik(const smc::ParticleCloud& cloud, const Vector& y_next, const StaticParams& statics,
                            double dt, int n_draws, const StreamKey& key, Exec exec)
{
    if (n_draws < 1) {
        throw InvalidArgument("one_step_pred_loglik: n_draws must be >= 1");
    }
    if (y_next.size() != statics.d()) {
        throw InvalidArgument(fmt::format("one_step_pred_loglik: y has {} entries, model has d={}", y_next.size(),
                                          statics.d()));
    }
    const smc::TransitionModel model(statics, dt);
    const auto N = static_cast<int>(cloud.size());
    const int R = std::max(n_draws, N);
    // Draw r goes to particle r mod N.
    std::vector<double> terms(static_cast<std::size_t>(R));
    for_each_index(exec, R, [&](std::ptrdiff_t r) {
        const auto i = static_cast<std::size_t>(r % N);
        const int share = R / N + (static_cast<int>(i) < R % N ? 1 : 0);
        auto rng = key.stream(static_cast<std::uint64_t>(r));
        const auto next = propagate(model, cloud.particles[i].state, rng);
        terms[static_cast<std::size_t>(r)] = cloud.particles[i].log_weight - std::log(static_cast<double>(share)) +
                                             emission::log_likelihood(y_next, next, statics);
    });
    const double v = linalg::log_sum_exp(terms);
    if (v == -std::numeric_limits<double>::infinity()) {
        spdlog::warn("one-step predictive likelihood underflowed for every draw");
    }
    return v;
}

void write_prediction_csv(const std::string& path, const PredictiveSummary& summary,
                          const nlohmann::json& config_echo)
{
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write '{}'", path));
    }
    out << "# " << config_echo.dump() << '\n';
    out << "t,j,mean,q05,q50,q95\n";
    if (summary.horizon == 0) {
        return;
    }
    const Matrix& q05 = summary.quantile(0.05);
    const Matrix& q50 = summary.quantile(0.5);
    const Matrix& q95 = summary.quantile(0.95);
    for (int t = 0; t < summary.horizon; ++t) {
        for (Eigen::Index j = 0; j < summary.mean.cols(); ++j) {
            out << t + 1 << ',' << j + 1 << ',' << io::format_double(summary.mean(t, j)) << ','
                << io::format_double(q05(t, j)) << ',' << io::format_double(q50(t, j)) << ','
                << io::format_double(q95(t, j)) << '\n';
        }
    }
}

}  // namespace pmlds::prediction
