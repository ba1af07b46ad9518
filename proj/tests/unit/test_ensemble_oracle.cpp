#include <clusterflow/ensemble_oracle.hpp>
#include <clusterflow/errors.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace clusterflow;

namespace {

OneParticleDensity unit_initial(double mass = 1.0)
{
    InitialDataSpec spec;
    spec.mass = mass;
    spec.components = 16;
    spec.bandwidth = 0.3;
    spec.temperature = 0.04;
    spec.spatial_width = 0.2;
    return maxwellian_gaussian(spec);
}

EnsembleConfig small_ensemble(double intensity, std::size_t replicates = 500)
{
    EnsembleConfig cfg;
    cfg.intensity = intensity;
    cfg.replicates = replicates;
    cfg.seed = 17;
    cfg.bandwidth = 0.3;
    return cfg;
}

OperatorContext harmonic_ctx()
{
    OperatorContext ctx;
    ctx.potential = {PotentialKind::harmonic_pair, 1.0, 1.0};
    return ctx;
}

std::vector<ProbeConfiguration> one_particle_probes(std::size_t count, double t = 0.2, double w = 0.2)
{
    std::vector<ProbeConfiguration> out;
    for (const auto& p : default_probes(t, w)) {
        if (out.size() == count)
            break;
        out.push_back({p});
    }
    return out;
}

} // namespace

TEST(EnsembleConfig, Validation)
{
    EXPECT_THROW(small_ensemble(1.0, 10).validate(), std::invalid_argument);
    EXPECT_THROW(small_ensemble(30.0).validate(), std::invalid_argument);
    EXPECT_THROW(small_ensemble(0.0).validate(), std::invalid_argument);
    EXPECT_NO_THROW(small_ensemble(4.0).validate());
}

TEST(SampleEnsemble, VanishingIntensityGivesEmptyRealizations)
{
    const auto s = sample_ensemble(unit_initial(), small_ensemble(1e-12, 1000));
    for (std::size_t i = 0; i < s.realizations.size(); ++i)
        EXPECT_EQ(s.count(i), 0u);
}

TEST(SampleEnsemble, PoissonMeanCount)
{
    const auto s = sample_ensemble(unit_initial(), small_ensemble(4.0, 10'000));
    EXPECT_NEAR(s.mean_count(), 4.0, 3.0 * 0.02);
    EXPECT_NEAR(s.count_variance(), 4.0, 0.3);
}

TEST(SampleEnsemble, Deterministic)
{
    const auto a = sample_ensemble(unit_initial(), small_ensemble(3.0));
    const auto b = sample_ensemble(unit_initial(), small_ensemble(3.0));
    EXPECT_EQ(a.realizations, b.realizations);
}

TEST(EvolveEnsemble, ZeroTimeUnchanged)
{
    const auto s = sample_ensemble(unit_initial(), small_ensemble(3.0, 100));
    EXPECT_EQ(evolve_ensemble(s, 0.0, harmonic_ctx()).realizations, s.realizations);
}

TEST(EvolveEnsemble, FreeParticlesStream)
{
    const auto s = sample_ensemble(unit_initial(), small_ensemble(3.0, 100));
    const auto e = evolve_ensemble(s, 0.5, OperatorContext{});
    EXPECT_EQ(e.time, 0.5);
    for (std::size_t i = 0; i < s.realizations.size(); ++i)
        for (std::size_t j = 0; j < s.count(i); ++j)
            EXPECT_EQ(e.realizations[i][j].r, s.realizations[i][j].r + 0.5 * s.realizations[i][j].v);
}

TEST(EvolveEnsemble, TwoBodyHarmonicAnalytic)
{
    EnsembleState s;
    s.realizations = {{{{0.3, 0, 0}, {0.1, 0, 0}}, {{-0.1, 0.2, 0}, {0, 0.4, 0}}}};
    const double t = 0.7, w = std::sqrt(2.0);
    OperatorContext ctx = harmonic_ctx();
    const auto e = evolve_ensemble(s, t, ctx);
    const auto& a = s.realizations[0];
    const Vec3 d0 = a[0].r - a[1].r, u0 = a[0].v - a[1].v;
    const Vec3 d = std::cos(w * t) * d0 + std::sin(w * t) / w * u0;
    const Vec3 c = 0.5 * (a[0].r + a[1].r) + t * 0.5 * (a[0].v + a[1].v);
    EXPECT_LT(norm(e.realizations[0][0].r - (c + 0.5 * d)), 1e-6);
    EXPECT_LT(norm(e.realizations[0][1].r - (c - 0.5 * d)), 1e-6);
}

TEST(EmpiricalDensity, SingleParticlePeak)
{
    const MacroPoint x0{{0.1, 0, 0}, {0, 0.2, 0}};
    EnsembleState s;
    s.realizations = {{x0}};
    const auto e = empirical_phase_density(s, 1, {{x0}}, 0.3);
    EXPECT_NEAR(e.cell(0, 0).value, gaussian_kernel(MacroPoint{}, 0.3), 1e-12);
}

TEST(EmpiricalDensity, PairOfOneParticleIsEmpty)
{
    const MacroPoint x0{{0.1, 0, 0}, {0, 0.2, 0}};
    EnsembleState s;
    s.realizations = {{x0}};
    const auto e = empirical_phase_density(s, 2, {{x0, x0}}, 0.3);
    EXPECT_EQ(e.cell(0, 0).value, 0.0);
    EXPECT_TRUE(e.sparse);
}

TEST(EmpiricalDensity, OrderedPairsCounted)
{
    const MacroPoint a{{0.1, 0, 0}, {0, 0, 0}}, b{{-0.1, 0, 0}, {0.5, 0, 0}};
    EnsembleState s;
    s.realizations = {{a, b}};
    const auto e = empirical_phase_density(s, 2, {{a, b}}, 0.3);
    const double expected = gaussian_kernel(a, a, 0.3) * gaussian_kernel(b, b, 0.3) +
                            gaussian_kernel(a, b, 0.3) * gaussian_kernel(b, a, 0.3);
    EXPECT_NEAR(e.cell(0, 0).value, expected, 1e-12 * expected);
}

TEST(EmpiricalDensity, LawOfLargeNumbersAtZeroTime)
{
    const auto f1 = unit_initial(2.0);
    const auto cfg = small_ensemble(2.0, 4000);
    const auto probes = one_particle_probes(3);
    const auto e = run_oracle(f1, cfg, harmonic_ctx(), {0.0}, 1, probes);
    const auto smoothed = f1.with_bandwidth(std::hypot(f1.bandwidth(), cfg.bandwidth));
    for (std::size_t p = 0; p < probes.size(); ++p) {
        const auto& c = e.cell(0, p);
        EXPECT_LE(std::abs(c.value - smoothed.evaluate(probes[p][0])), 3.0 * c.std_error) << p;
    }
}

TEST(RunOracle, ControlVariateAgreesWithPlain)
{
    const auto f1 = unit_initial();
    auto cfg = small_ensemble(1.0, 2000);
    const auto probes = one_particle_probes(2);
    const auto plain = run_oracle(f1, cfg, harmonic_ctx(), {0.1}, 1, probes);
    cfg.control_variate = true;
    const auto cv = run_oracle(f1, cfg, harmonic_ctx(), {0.1}, 1, probes);
    EXPECT_TRUE(cv.control_variate);
    for (std::size_t p = 0; p < probes.size(); ++p) {
        const auto& a = plain.cell(0, p);
        const auto& b = cv.cell(0, p);
        EXPECT_LE(std::abs(a.value - b.value), 3.0 * std::hypot(a.std_error, b.std_error)) << p;
        EXPECT_LT(b.std_error, a.std_error);
    }
}

TEST(RunOracle, JsonRoundTrip)
{
    const auto e = run_oracle(unit_initial(), small_ensemble(1.0, 200), harmonic_ctx(), {0.0, 0.05}, 1,
                              one_particle_probes(2));
    const auto back = EmpiricalDensity::from_json(e.to_json());
    EXPECT_EQ(back.times, e.times);
    EXPECT_EQ(back.probes, e.probes);
    EXPECT_EQ(back.replicates, e.replicates);
    ASSERT_EQ(back.cells.size(), e.cells.size());
    for (std::size_t i = 0; i < e.cells.size(); ++i)
        EXPECT_EQ(back.cells[i].value, e.cells[i].value);
}

TEST(Compare, FreeSeriesMatchesOracle)
{
    const auto f1 = unit_initial();
    const auto ecfg = small_ensemble(1.0, 3000);
    const auto probes = one_particle_probes(3);
    const OperatorContext ctx;
    const auto oracle = run_oracle(f1, ecfg, ctx, {0.1}, 1, probes);

    SeriesConfig scfg;
    scfg.truncation_order = 1;
    scfg.times = {0.1};
    scfg.quadrature.n_samples = 200;
    scfg.observation = Observation::mollified;
    scfg.observation_bandwidth = ecfg.bandwidth;
    std::vector<MacroPoint> pts;
    for (const auto& c : probes)
        pts.push_back(c[0]);
    const auto series = solve_series_g1(f1, scfg, ctx, pts);
    const auto report = compare_to_series(oracle, series);
    EXPECT_TRUE(report.final_order_within(3.0));
}

TEST(Compare, MismatchedBandwidthRejected)
{
    const auto f1 = unit_initial();
    const auto probes = one_particle_probes(1);
    const auto oracle = run_oracle(f1, small_ensemble(1.0, 100), OperatorContext{}, {0.1}, 1, probes);
    SeriesConfig scfg;
    scfg.truncation_order = 0;
    scfg.times = {0.1};
    scfg.observation = Observation::mollified;
    scfg.observation_bandwidth = 0.5;
    const auto series = solve_series_g1(f1, scfg, OperatorContext{}, {probes[0][0]});
    EXPECT_THROW(compare_to_series(oracle, series), ConfigMismatchError);
}

TEST(Compare, TraceAgainstItselfIsZero)
{
    SeriesConfig scfg;
    scfg.truncation_order = 1;
    scfg.times = {0.05};
    scfg.quadrature.n_samples = 200;
    const auto trace = solve_series_g1(unit_initial(1e-5), scfg, harmonic_ctx(), default_probes());
    const auto report = compare_traces(trace, trace);
    for (const auto& d : report.probes)
        EXPECT_EQ(d.delta, 0.0);
    for (const auto& o : report.overall)
        EXPECT_EQ(o.aggregate, 0.0);
    EXPECT_TRUE(report.monotone);
}
