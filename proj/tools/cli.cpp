#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pmlds/finescale.hpp"
#include "pmlds/integrator.hpp"
#include "pmlds/io.hpp"
#include "pmlds/online_em.hpp"
#include "pmlds/prediction.hpp"
#include "pmlds/smc.hpp"

namespace pmlds::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string out = ".";
};

struct ModelFlags {
    std::optional<int> M, K, L, N;
    std::optional<double> dt;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--config", c.config_path, "Model configuration (JSON)");
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--threads", c.threads, "Cap on worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", c.out, "Output directory");
}

void add_model_flags(CLI::App* cmd, ModelFlags& f)
{
    cmd->add_option("--M", f.M, "Number of experts");
    cmd->add_option("--K", f.K, "Latent dimension per expert");
    cmd->add_option("--L", f.L, "EM block length");
    cmd->add_option("--N", f.N, "Particles");
    cmd->add_option("--dt", f.dt, "Observation time step");
}

ModelConfig resolve_config(const Common& c, const ModelFlags& f, ModelConfig base)
{
    if (!c.config_path.empty()) {
        auto j = io::read_json(c.config_path);
        base = j.get<ModelConfig>();
    }
    if (f.M) base.M = *f.M;
    if (f.K) base.K = *f.K;
    if (f.L) base.L = *f.L;
    if (f.N) base.N = *f.N;
    if (f.dt) base.dt = *f.dt;
    if (c.seed) base.seed = *c.seed;
    return base;
}

void prepare_out(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw DataError(fmt::format("cannot create output directory '{}': {}", dir, ec.message()));
    }
}

std::string in_dir(const std::string& dir, const std::string& name)
{
    return (fs::path(dir) / name).string();
}

class Manifest {
public:
    Manifest(std::string command, const Common& c) : start_(std::chrono::steady_clock::now()), common_(c)
    {
        j_["command"] = std::move(command);
        j_["inputs"] = nlohmann::json::array();
        j_["outputs"] = nlohmann::json::array();
    }

    void input(const std::string& p) { j_["inputs"].push_back(p); }
    void output(const std::string& p) { j_["outputs"].push_back(p); }
    nlohmann::json& operator[](const char* key) { return j_[key]; }

    void write(std::uint64_t seed)
    {
        j_["seed"] = seed;
        j_["threads"] = max_threads();
        j_["wall_ms"] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        j_["versions"] = {{"pmlds", kVersion},
                          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                                                EIGEN_MINOR_VERSION)},
                          {"cli11", CLI11_VERSION}};
        io::write_json(in_dir(common_.out, "manifest.json"), j_);
    }

private:
    std::chrono::steady_clock::time_point start_;
    const Common& common_;
    nlohmann::json j_;
};

void configure_logging()
{
    static bool done = false;
    if (!done) {
        auto logger = spdlog::stderr_color_mt("pmlds");
        spdlog::set_default_logger(logger);
        done = true;
    }
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("PMLDS_LOG")) {
        spdlog::set_level(spdlog::level::from_str(env));
    }
}

std::vector<double> parse_list(const std::string& s)
{
    std::vector<double> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) {
            continue;
        }
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw InvalidArgument(fmt::format("'{}' is not a number", item));
        }
    }
    return out;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    Common common;
    int steps = 20000;
    int elements = 1000;
    int heat_steps = 0;
};

int cmd_generate_synthetic(const GenerateArgs& a)
{
    prepare_out(a.common.out);
    Manifest man("generate synthetic", a.common);
    const std::uint64_t seed = a.common.seed.value_or(0);
    if (a.steps < 1) {
        throw InvalidArgument("--steps must be >= 1");
    }
    const auto cfg = finescale::SyntheticConfig::defaults();
    const auto data = finescale::generate_synthetic(cfg, a.steps, StreamKey{seed, 0});

    const auto obs = in_dir(a.common.out, "observations.csv");
    io::write_csv(obs, data.ys, io::observation_header(cfg.d));
    const auto sig = in_dir(a.common.out, "signal.csv");
    io::write_csv(sig, data.signal, io::observation_header(cfg.d));
    Matrix latent(a.steps, 2 * static_cast<Eigen::Index>(cfg.experts.size()));
    std::vector<std::string> lh;
    for (std::size_t m = 0; m < cfg.experts.size(); ++m) {
        lh.push_back(fmt::format("x{}", m + 1));
    }
    for (std::size_t m = 0; m < cfg.experts.size(); ++m) {
        lh.push_back(fmt::format("zhat{}", m + 1));
    }
    const auto M = static_cast<Eigen::Index>(cfg.experts.size());
    for (int t = 0; t < a.steps; ++t) {
        const auto& s = data.latent[static_cast<std::size_t>(t)];
        latent.row(t).head(M) = s.X.transpose();
        latent.row(t).tail(M) = s.zhat.transpose();
    }
    const auto lat = in_dir(a.common.out, "latent.csv");
    io::write_csv(lat, latent, lh);
    const auto truth = in_dir(a.common.out, "truth.json");
    io::write_json(truth, nlohmann::json(data.truth));

    ModelConfig mc;
    mc.M = 2;
    mc.K = 1;
    mc.d = cfg.d;
    mc.dt = cfg.dt;
    mc.L = 200;
    mc.N = 200;
    mc.seed = seed;
    man["config"] = mc;
    for (const auto& p : {obs, sig, lat, truth}) {
        man.output(p);
    }
    man.write(seed);
    return kOk;
}

int cmd_generate_heat(const GenerateArgs& a)
{
    prepare_out(a.common.out);
    Manifest man("generate heat", a.common);
    const std::uint64_t seed = a.common.seed.value_or(0);
    const auto p = finescale::build_heat_problem(StreamKey{seed, 0}, a.elements);
    const auto path = in_dir(a.common.out, "heat_problem.json");
    io::write_json(path, {{"n_elements", p.n_elements},
                          {"dt_fine", p.dt_fine},
                          {"lumped_mass", p.lumped_mass},
                          {"conductivity", to_json_vector(p.conductivity)},
                          {"u0", to_json_vector(p.u0)}});
    man.output(path);
    if (a.heat_steps < 0) {
        throw InvalidArgument("--steps must be >= 0");
    }
    if (a.heat_steps > 0) {
        const finescale::HeatStepper stepper(p);
        Matrix ys(a.heat_steps, p.n_nodes());
        Vector u = p.u0;
        for (int t = 0; t < a.heat_steps; ++t) {
            u = stepper.step(u);
            ys.row(t) = u.transpose();
        }
        const auto obs = in_dir(a.common.out, "observations.csv");
        io::write_csv(obs, ys, io::observation_header(p.n_nodes()));
        man.output(obs);
    }
    man["config"] = {{"n_elements", p.n_elements}, {"dt_fine", p.dt_fine}};
    man.write(seed);
    return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    Common common;
    ModelFlags model;
    std::string data;
    std::string resume;
    int iterations = -1;
    int smoothed_draws = -1;
    bool serial = false;
};

int cmd_train(const TrainArgs& a)
{
    std::vector<std::string> header;
    const Matrix ys = io::read_csv(a.data, &header);
    if (ys.rows() == 0) {
        throw InvalidArgument(fmt::format("'{}' contains no observations", a.data));
    }
    ModelConfig base;
    base.M = 2;
    base.K = 1;
    base.L = 200;
    base.N = 200;
    ModelConfig config;
    std::optional<em::EmState> loaded;
    if (!a.resume.empty()) {
        ModelConfig saved;
        loaded = em::load_checkpoint(a.resume, &saved);
        config = resolve_config(a.common, a.model, saved);
        if (loaded->statics.d() != ys.cols()) {
            throw InvalidArgument(fmt::format("data has d={} columns but the checkpoint has d={}", ys.cols(),
                                              loaded->statics.d()));
        }
    } else {
        config = resolve_config(a.common, a.model, base);
    }
    config.d = static_cast<int>(ys.cols());
    config.validate();
    em::EmState state = loaded ? std::move(*loaded)
                               : em::EmState{em::initial_statics(config, ys, StreamKey{config.seed, 0}),
                                             std::nullopt, 0, {}};
    const int blocks = static_cast<int>(ys.rows() / config.L);
    if (blocks == 0) {
        throw InvalidArgument(fmt::format("'{}' has {} rows, fewer than one block of L={}", a.data, ys.rows(),
                                          config.L));
    }
    const int n_iter = a.iterations < 0 ? blocks : a.iterations;

    prepare_out(a.common.out);
    Manifest man("train", a.common);
    man.input(a.data);
    if (!a.resume.empty()) {
        man.input(a.resume);
    }
    const auto log_path = in_dir(a.common.out, "training_log.csv");
    const auto ckpt = in_dir(a.common.out, "checkpoint.json");
    const auto final_path = in_dir(a.common.out, "statics.json");
    std::ofstream log(log_path);
    if (!log) {
        throw DataError(fmt::format("cannot write '{}'", log_path));
    }
    log << "k,gamma,per_obs_loglik,per_obs_log_evidence";
    for (int m = 1; m <= config.M; ++m) {
        log << ",b_x" << m;
    }
    log << ",b_z,sigma2_min,sigma2_max,min_ess,resamples,wall_ms\n";

    em::EmOptions opt;
    opt.smoothed_draws = a.smoothed_draws;
    opt.exec = a.serial ? Exec::serial : Exec::parallel;
    const StreamKey root{config.seed, 0};
    for (int it = 0; it < n_iter; ++it) {
        const int b = it % blocks;
        const auto r = em::em_iteration(state, ys.middleRows(static_cast<Eigen::Index>(b) * config.L, config.L),
                                        config, root.child(100, static_cast<std::uint64_t>(state.k + 1)), opt);
        log << r.k << ',' << io::format_double(r.gamma) << ',' << io::format_double(r.per_obs_loglik) << ','
            << io::format_double(r.per_obs_log_evidence);
        for (const auto& p : state.statics.ou_x) {
            log << ',' << io::format_double(p.b());
        }
        log << ',' << io::format_double(state.statics.ou_z.b()) << ','
            << io::format_double(state.statics.sigma2.minCoeff()) << ','
            << io::format_double(state.statics.sigma2.maxCoeff()) << ',' << io::format_double(r.min_ess) << ','
            << r.resample_count << ',' << io::format_double(r.wall_ms) << '\n';
        log.flush();
        em::save_checkpoint(ckpt, state, config);
        spdlog::info("iteration {}: per-observation fit {:.4f}", r.k, r.per_obs_loglik);
    }
    io::write_json(final_path, nlohmann::json(state.statics));
    man["config"] = config;
    man["counters"] = {{"b_clamps", state.counters.b_clamps}, {"S_floors", state.counters.S_floors}};
    for (const auto& p : {log_path, ckpt, final_path}) {
        man.output(p);
    }
    man.write(config.seed);
    return kOk;
}

// ----------------------------------------------------------------- predict

struct PredictArgs {
    Common common;
    std::optional<int> N;
    std::string checkpoint;
    std::string data;
    int horizon = 100;
    int draws = 500;
};

int cmd_predict(const PredictArgs& a)
{
    ModelConfig config;
    const auto state = em::load_checkpoint(a.checkpoint, &config);
    if (a.common.seed) {
        config.seed = *a.common.seed;
    }
    if (a.N) {
        config.N = *a.N;
    }
    config.validate();
    const Matrix ys = io::read_csv(a.data);
    if (ys.rows() == 0) {
        throw InvalidArgument(fmt::format("'{}' contains no observations", a.data));
    }
    if (ys.cols() != state.statics.d()) {
        throw InvalidArgument(fmt::format("data has d={} columns but the checkpoint has d={} (M={}, K={})",
                                          ys.cols(), state.statics.d(), state.statics.M(), state.statics.K()));
    }
    if (a.horizon < 0) {
        throw InvalidArgument("--horizon must be >= 0");
    }
    const StreamKey root{config.seed, 0};
    auto step = smc::init_cloud(state.statics, ys.row(0).transpose(), config, root.child(tags::init));
    for (Eigen::Index t = 1; t < ys.rows(); ++t) {
        step = smc::filter_step(step.next, ys.row(t).transpose(), state.statics, config,
                                root.child(tags::filter, static_cast<std::uint64_t>(t)));
    }
    prediction::PredictOptions opt;
    opt.n_draws = a.draws;
    const auto summary = prediction::predict(step.next, state.statics, config.dt, a.horizon,
                                             root.child(tags::predict), opt);
    prepare_out(a.common.out);
    Manifest man("predict", a.common);
    man.input(a.checkpoint);
    man.input(a.data);
    const auto path = in_dir(a.common.out, "prediction.csv");
    nlohmann::json echo = {{"config", config}, {"horizon", a.horizon}, {"draws", a.draws}};
    prediction::write_prediction_csv(path, summary, echo);
    man.output(path);
    man["config"] = config;
    man.write(config.seed);
    return kOk;
}

// ----------------------------------------------------------- simulate-heat

struct HeatArgs {
    Common common;
    ModelFlags model;
    int elements = 100;
    int burst = 20;
    int leap = 500;
    std::optional<double> tolerance;
    double max_time = 1.0;
    std::string snapshots = "0.15,0.25,0.5,1.0";
    int draws = 500;
    bool reinit_sample = false;
    bool lumped = false;
    bool exclude_boundary = false;
};

int cmd_simulate_heat(const HeatArgs& a)
{
    const std::uint64_t seed_in = a.common.seed.value_or(0);
    auto problem = finescale::build_heat_problem(StreamKey{seed_in, 0}, a.elements);
    problem.lumped_mass = a.lumped;
    ModelConfig base;
    base.M = 2;
    base.K = 2;
    base.L = 10;
    base.N = 100;
    base.seed = seed_in;
    auto config = resolve_config(a.common, a.model, base);
    config.d = a.exclude_boundary ? problem.n_nodes() - 2 : problem.n_nodes();
    config.validate();

    integrator::IntegrationSchedule schedule{a.burst, a.leap, a.tolerance, a.max_time};
    integrator::IntegratorOptions opt;
    opt.snapshot_times = parse_list(a.snapshots);
    opt.n_draws = a.draws;
    opt.reinit_from_sample = a.reinit_sample;
    opt.exclude_boundary = a.exclude_boundary;

    integrator::HeatFineStepper stepper(problem);
    integrator::ReferenceSolution reference(problem);
    const auto report = integrator::run_adaptive(stepper, schedule, config, StreamKey{config.seed, 1}, opt,
                                                 [&](long s) { return reference.at(s); });

    prepare_out(a.common.out);
    Manifest man("simulate-heat", a.common);
    const auto rpath = in_dir(a.common.out, "report.json");
    io::write_json(rpath, nlohmann::json(report));
    man.output(rpath);
    const Vector x = problem.nodes();
    for (const auto& s : report.snapshots) {
        const auto tag = fmt::format("{:g}", s.time);
        Matrix m(x.size(), 6);
        m.col(0) = x;
        m.col(1) = s.mean;
        m.col(2) = s.q05;
        m.col(3) = s.q50;
        m.col(4) = s.q95;
        m.col(5) = s.exact ? *s.exact : Vector::Constant(x.size(), std::nan(""));
        const auto sp = in_dir(a.common.out, fmt::format("snapshot_t{}.csv", tag));
        io::write_csv(sp, m, {"x", "mean", "q05", "q50", "q95", "exact"});
        man.output(sp);
        if (s.exact) {
            Matrix e(x.size(), 2);
            e.col(0) = x;
            e.col(1) = *s.exact;
            const auto ep = in_dir(a.common.out, fmt::format("exact_t{}.csv", tag));
            io::write_csv(ep, e, {"x", "u"});
            man.output(ep);
        }
    }
    man["config"] = config;
    man["schedule"] = {{"burst", a.burst},
                       {"leap", a.leap},
                       {"tolerance", a.tolerance ? nlohmann::json(*a.tolerance) : nlohmann::json(nullptr)},
                       {"max_time", a.max_time},
                       {"elements", a.elements},
                       {"exclude_boundary", a.exclude_boundary}};
    man.write(config.seed);
    std::cout << fmt::format("speedup {:g} ({} fine steps of {})\n", report.speedup(), report.fine_steps,
                             report.total_steps);
    if (report.truncated) {
        std::cerr << "integration truncated: " << report.diagnostics << '\n';
        return kNumerical;
    }
    return kOk;
}

// --------------------------------------------------------- bench-scaling

struct BenchArgs {
    Common common;
    std::string dims = "100,200,400,800";
    int repeats = 3;
    int blocks = 5;
    int N = 100;
    int L = 10;
    bool serial = false;
};

int cmd_bench_scaling(const BenchArgs& a)
{
    const std::uint64_t seed = a.common.seed.value_or(0);
    const auto dims = parse_list(a.dims);
    if (dims.empty() || a.repeats < 1 || a.blocks < 1) {
        throw InvalidArgument("bench-scaling needs at least one dimension, repeat and block");
    }
    prepare_out(a.common.out);
    Manifest man("bench-scaling", a.common);
    Matrix rows(static_cast<Eigen::Index>(dims.size()) * a.repeats, 4);
    Eigen::Index r = 0;
    std::vector<double> log_d;
    std::vector<double> log_ms;
    for (double dd : dims) {
        const int d = static_cast<int>(dd);
        if (d < 1 || dd != d) {
            throw InvalidArgument(fmt::format("invalid dimension {}", dd));
        }
        auto cfg = finescale::SyntheticConfig::defaults();
        cfg.d = d;
        cfg.experts = {OuParams::isotropic(2, 0.1, -5.0, 0.2), OuParams::isotropic(2, 1.0, 5.0, 2.0)};
        const auto data = finescale::generate_synthetic(cfg, a.L * a.blocks, StreamKey{seed, 7});
        ModelConfig mc;
        mc.M = 2;
        mc.K = 2;
        mc.d = d;
        mc.L = a.L;
        mc.N = a.N;
        mc.seed = seed;
        double best = std::numeric_limits<double>::infinity();
        for (int rep = 0; rep < a.repeats; ++rep) {
            em::EmState state{em::initial_statics(mc, data.ys, StreamKey{seed, 0}), std::nullopt, 0, {}};
            em::EmOptions opt;
            opt.exec = a.serial ? Exec::serial : Exec::parallel;
            const auto t0 = std::chrono::steady_clock::now();
            double checksum = 0.0;
            for (int b = 0; b < a.blocks; ++b) {
                const auto rep_b = em::em_iteration(state, data.ys.middleRows(b * a.L, a.L), mc,
                                                    StreamKey{seed, static_cast<std::uint64_t>(b + 1)}, opt);
                checksum += rep_b.per_obs_log_evidence;
            }
            checksum += state.statics.sigma2.sum();
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / a.blocks;
            rows.row(r++) << d, rep, ms, checksum;
            best = std::min(best, ms);
        }
        log_d.push_back(std::log(d));
        log_ms.push_back(std::log(best));
    }
    const auto path = in_dir(a.common.out, "scaling.csv");
    io::write_csv(path, rows, {"d", "repeat", "per_block_ms", "checksum"});
    man.output(path);
    if (log_d.size() >= 2) {
        const double n = static_cast<double>(log_d.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < log_d.size(); ++i) {
            sx += log_d[i];
            sy += log_ms[i];
            sxx += log_d[i] * log_d[i];
            sxy += log_d[i] * log_ms[i];
        }
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        man["slope"] = slope;
        std::cout << fmt::format("log-log slope {:.3f}\n", slope);
    }
    man["config"] = {{"M", 2}, {"K", 2}, {"L", a.L}, {"N", a.N}, {"blocks", a.blocks}, {"repeats", a.repeats}};
    man.write(seed);
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv)
{
    configure_logging();
    CLI::App app{"Partial-membership linear dynamic systems: learning, prediction and adaptive integration"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Generate synthetic or heat-equation data");
    generate->require_subcommand(1);
    auto* gen_syn = generate->add_subcommand("synthetic", "Synthetic PMLDS observations (M=2, K=1, d=10)");
    add_common(gen_syn, gen.common);
    gen_syn->add_option("--steps", gen.steps, "Number of time steps");
    auto* gen_heat = generate->add_subcommand("heat", "Random-conductivity heat problem");
    add_common(gen_heat, gen.common);
    gen_heat->add_option("--elements", gen.elements, "Finite elements");
    gen_heat->add_option("--steps", gen.heat_steps, "Fine steps of the solution to write (0: problem only)");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Online EM over an observation CSV");
    add_common(train, tr.common);
    add_model_flags(train, tr.model);
    train->add_option("--data", tr.data, "Observation CSV")->required();
    train->add_option("--resume", tr.resume, "Checkpoint to continue from");
    train->add_option("--iterations", tr.iterations, "EM iterations (default: one pass over the blocks)");
    train->add_option("--smoothed-draws", tr.smoothed_draws, "Smoothed trajectories per block (default N)");
    train->add_flag("--serial", tr.serial, "Use the serial reference kernels");

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "Filter a CSV with trained parameters and predict ahead");
    add_common(predict, pr.common);
    predict->add_option("--N", pr.N, "Particles");
    predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint from train")->required();
    predict->add_option("--data", pr.data, "Observation CSV")->required();
    predict->add_option("--horizon", pr.horizon, "Steps to predict");
    predict->add_option("--draws", pr.draws, "Predictive draws");

    HeatArgs ha;
    auto* heat = app.add_subcommand("simulate-heat", "Adaptive integration of the heat problem");
    add_common(heat, ha.common);
    add_model_flags(heat, ha.model);
    heat->add_option("--elements", ha.elements, "Finite elements");
    heat->add_option("--burst", ha.burst, "Fine steps per burst");
    heat->add_option("--leap", ha.leap, "Predicted steps per leap (0: fine only)");
    heat->add_option("--tolerance", ha.tolerance, "Max mean 5-95% band width per leap");
    heat->add_option("--max-time", ha.max_time, "Simulated time");
    heat->add_option("--snapshots", ha.snapshots, "Comma-separated snapshot times");
    heat->add_option("--draws", ha.draws, "Predictive draws");
    heat->add_flag("--reinit-sample", ha.reinit_sample, "Reinitialize from a predictive draw");
    heat->add_flag("--lumped-mass", ha.lumped, "Lumped mass matrix");
    heat->add_flag("--exclude-boundary", ha.exclude_boundary, "Leave the pinned boundary nodes out of the model");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench-scaling", "Per-block EM time over a sweep of d");
    add_common(bench, ba.common);
    bench->add_option("--dims", ba.dims, "Comma-separated dimensions");
    bench->add_option("--repeats", ba.repeats, "Repeats per dimension");
    bench->add_option("--blocks", ba.blocks, "EM blocks timed per repeat");
    bench->add_option("--N", ba.N, "Particles");
    bench->add_option("--L", ba.L, "Block length");
    bench->add_flag("--serial", ba.serial, "Use the serial reference kernels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    auto threads_of = [&]() -> int {
        for (const Common* c : {&gen.common, &tr.common, &pr.common, &ha.common, &ba.common}) {
            if (c->threads > 0) {
                return c->threads;
            }
        }
        return 0;
    };
    set_threads(threads_of());

    try {
        if (gen_syn->parsed()) return cmd_generate_synthetic(gen);
        if (gen_heat->parsed()) return cmd_generate_heat(gen);
        if (train->parsed()) return cmd_train(tr);
        if (predict->parsed()) return cmd_predict(pr);
        if (heat->parsed()) return cmd_simulate_heat(ha);
        if (bench->parsed()) return cmd_bench_scaling(ba);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}

}  // namespace pmlds::cli
