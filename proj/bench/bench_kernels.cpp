// Serial reference vs OpenMP kernels on the hot paths of one EM block.
#include <benchmark/benchmark.h>

#include <map>
#include <memory>

#include "pmlds/finescale.hpp"
#include "pmlds/online_em.hpp"
#include "pmlds/smc.hpp"

using namespace pmlds;

namespace {

finescale::SyntheticData synthetic(int d)
{
    auto cfg = finescale::SyntheticConfig::defaults();
    cfg.d = d;
    return finescale::generate_synthetic(cfg, 20, StreamKey{1, 1});
}

ModelConfig model(int d)
{
    ModelConfig c;
    c.M = 2;
    c.K = 1;
    c.d = d;
    c.L = 20;
    c.N = 100;
    return c;
}

struct Fixture {
    ModelConfig config;
    finescale::SyntheticData data;
    StaticParams& statics = data.truth;
    smc::FilterTrace trace;

    explicit Fixture(int d)
        : config(model(d)), data(synthetic(d)), trace(smc::run_filter(data.ys, statics, config, StreamKey{1, 2}))
    {
    }
};

Fixture& fixture(int d)
{
    static std::map<int, std::unique_ptr<Fixture>> cache;
    auto& f = cache[d];
    if (!f) {
        f = std::make_unique<Fixture>(d);
    }
    return *f;
}

Exec exec_of(const benchmark::State& state) { return state.range(1) == 0 ? Exec::serial : Exec::parallel; }

void BM_FilterStep(benchmark::State& state)
{
    auto& f = fixture(static_cast<int>(state.range(0)));
    const Vector y = f.data.ys.row(1).transpose();
    for (auto _ : state) {
        auto res = smc::filter_step(f.trace.clouds.front(), y, f.statics, f.config, StreamKey{1, 3}, exec_of(state));
        benchmark::DoNotOptimize(res.log_evidence_increment);
    }
}

void BM_Smoother(benchmark::State& state)
{
    auto& f = fixture(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        auto paths = smc::backward_smooth(f.trace.clouds, f.statics, f.config, StreamKey{1, 4}, exec_of(state));
        benchmark::DoNotOptimize(paths.data());
    }
}

void BM_Projections(benchmark::State& state)
{
    auto& f = fixture(static_cast<int>(state.range(0)));
    const auto paths = smc::backward_smooth(f.trace.clouds, f.statics, f.config, StreamKey{1, 4});
    const auto stats = em::block_suff_stats(paths, f.data.ys, f.config.K);
    for (auto _ : state) {
        auto P = em::update_projections(stats.emission, em::kProjectionPriorVariance, f.config.K, exec_of(state));
        auto s2 = em::update_sigmas(stats.emission, P, f.config.L, exec_of(state));
        benchmark::DoNotOptimize(s2.data());
    }
}

void dims(benchmark::internal::Benchmark* b)
{
    for (int d : {100, 400, 1600}) {
        for (int e : {0, 1}) {
            b->Args({d, e});
        }
    }
    b->ArgNames({"d", "parallel"})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_FilterStep)->Apply(dims);
BENCHMARK(BM_Smoother)->Apply(dims);
BENCHMARK(BM_Projections)->Apply(dims);

BENCHMARK_MAIN();
