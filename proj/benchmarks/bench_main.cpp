#include <clusterflow/cluster_cumulants.hpp>
#include <clusterflow/ensemble_oracle.hpp>
#include <clusterflow/hierarchy_solver.hpp>

#include <benchmark/benchmark.h>

using namespace clusterflow;

namespace {

OperatorContext gaussian_ctx()
{
    OperatorContext ctx;
    ctx.potential = {PotentialKind::gaussian_pair, 1.0, 1.0};
    return ctx;
}

std::vector<MacroPoint> cluster(std::size_t k)
{
    RandomStream rng(7);
    std::vector<MacroPoint> pts(k);
    for (auto& p : pts)
        p = {{rng.normal(), rng.normal(), rng.normal()}, {rng.normal(), rng.normal(), rng.normal()}};
    return pts;
}

PhaseFunction bump(std::size_t k)
{
    return PhaseFunction(k, [](std::span<const MacroPoint> pts) {
        double e = 0.0;
        for (const auto& p : pts)
            e += norm2(p.r) + norm2(p.v);
        return std::exp(-0.5 * e);
    });
}

void BM_FlowMap(benchmark::State& state)
{
    const auto ctx = gaussian_ctx();
    const auto pts = cluster(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(flow_map(ctx.potential, ctx.flow, 0.1, pts));
    state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_FlowMap)->Arg(2)->Arg(4)->Arg(8);

void BM_Cumulant(benchmark::State& state)
{
    const auto ctx = gaussian_ctx();
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto pts = cluster(1 + n);
    const auto f = bump(1 + n);
    const auto ground = ClusterIndexSet::standard(1, n);
    for (auto _ : state)
        benchmark::DoNotOptimize(apply_cumulant(ctx, 0.05, ground, f, pts));
}
BENCHMARK(BM_Cumulant)->DenseRange(1, 3);

void BM_EvaluateV(benchmark::State& state)
{
    const auto ctx = gaussian_ctx();
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto pts = cluster(2 + n);
    const auto f = bump(2 + n);
    for (auto _ : state)
        benchmark::DoNotOptimize(evaluate_V(ctx, 0.05, n, 2, f, pts));
}
BENCHMARK(BM_EvaluateV)->DenseRange(0, 2);

void BM_Oracle(benchmark::State& state)
{
    InitialDataSpec spec;
    spec.temperature = 0.04;
    spec.spatial_width = 0.2;
    const auto f1 = maxwellian_gaussian(spec);
    EnsembleConfig cfg;
    cfg.intensity = 1.0;
    cfg.replicates = static_cast<std::size_t>(state.range(0));
    cfg.control_variate = true;
    std::vector<ProbeConfiguration> probes;
    for (const auto& p : default_probes(0.04, 0.2))
        probes.push_back({p});
    const auto ctx = gaussian_ctx();
    for (auto _ : state)
        benchmark::DoNotOptimize(run_oracle(f1, cfg, ctx, {0.05}, 1, probes));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Oracle)->Arg(1000)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
