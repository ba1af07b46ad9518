#include <clusterflow_tools/commands.hpp>

#include <clusterflow/cluster_cumulants.hpp>
#include <clusterflow/random.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace clusterflow::tools {

namespace {

/// Gaussian bump in every argument, centred near the given points.
PhaseFunction gaussian_test_function(std::span<const MacroPoint> near, RandomStream& rng)
{
    std::vector<MacroPoint> centres(near.begin(), near.end());
    for (auto& c : centres) {
        c.v += 0.3 * Vec3{rng.normal(), rng.normal(), rng.normal()};
        c.r += 0.3 * Vec3{rng.normal(), rng.normal(), rng.normal()};
    }
    return PhaseFunction(near.size(), [centres](std::span<const MacroPoint> pts) {
        double e = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            e += norm2(pts[i].v - centres[i].v) + norm2(pts[i].r - centres[i].r);
        return std::exp(-0.5 * e);
    });
}

std::vector<MacroPoint> random_points(std::size_t m, RandomStream& rng, double scale = 1.0)
{
    std::vector<MacroPoint> pts(m);
    for (auto& p : pts)
        p = {{scale * rng.normal(), scale * rng.normal(), scale * rng.normal()},
             {scale * rng.normal(), scale * rng.normal(), scale * rng.normal()}};
    return pts;
}

IdentityRecord bounded(std::string name, double value, double bound)
{
    return {std::move(name), value, bound, std::isfinite(value) && value < bound, {}};
}

IdentityRecord bounded_inclusive(std::string name, double value, double bound)
{
    return {std::move(name), value, bound, std::isfinite(value) && value <= bound, {}};
}

} // namespace

std::vector<IdentityRecord> run_identity_suite(const RunConfig& cfg)
{
    const auto& opt = cfg.identities;
    const std::uint64_t seed = cfg.series.quadrature.seed;
    std::vector<IdentityRecord> out;

    for (std::size_t m = 1; m <= 8; ++m) {
        const std::int64_t s = partition_identity_sum(m);
        const std::int64_t expected = m == 1 ? 1 : 0;
        IdentityRecord r{"partition_sum_m" + std::to_string(m), static_cast<double>(std::llabs(s - expected)), 0.0,
                         s == expected, std::to_string(s)};
        out.push_back(r);
    }

    const OperatorContext& ctx = cfg.context;
    OperatorContext free_ctx = ctx;
    free_ctx.potential = PotentialSpec{};

    for (std::size_t n = 1; n <= 3; ++n) {
        double worst = 0.0;
        for (std::size_t c = 0; c < opt.cases; ++c) {
            RandomStream rng(seed, {0x1d, 1, n, c});
            const auto pts = random_points(1 + n, rng);
            const auto f = gaussian_test_function(pts, rng);
            worst = std::max(worst, std::abs(apply_cumulant(ctx, 0.0, ClusterIndexSet::standard(1, n), f, pts)));
        }
        out.push_back(bounded("cumulant_t0_n" + std::to_string(n), worst, opt.tolerance));
    }

    {
        double worst = 0.0;
        for (std::size_t k = 1; k <= 3; ++k) {
            for (std::size_t c = 0; c < opt.cases; ++c) {
                RandomStream rng(seed, {0x1d, 2, k, c});
                const auto pts = random_points(k, rng);
                const auto f = gaussian_test_function(pts, rng);
                const double t = opt.t * (2.0 * rng.uniform() - 1.0);
                worst = std::max(worst, std::abs(apply_S_hat(free_ctx, t, f, pts) - f(pts)));
            }
        }
        out.push_back(bounded("free_scattering_identity", worst, opt.tolerance));
    }

    for (std::size_t n = 1; n <= 2; ++n) {
        double worst = 0.0;
        for (std::size_t k = 1; k <= 2; ++k) {
            for (std::size_t c = 0; c < opt.cases; ++c) {
                RandomStream rng(seed, {0x1d, 3, n, k, c});
                const auto pts = random_points(k + n, rng);
                const auto f = gaussian_test_function(pts, rng);
                worst = std::max(worst, std::abs(evaluate_V(free_ctx, opt.t, n, k, f, pts)));
            }
        }
        out.push_back(bounded("free_V_collapse_n" + std::to_string(n), worst, opt.tolerance));
    }

    {
        double worst = 0.0;
        for (std::size_t k = 1; k <= 2; ++k) {
            for (std::size_t c = 0; c < opt.cases; ++c) {
                RandomStream rng(seed, {0x1d, 4, k, c});
                const auto pts = random_points(k + 1, rng, 0.7);
                const auto f = gaussian_test_function(pts, rng);
                const double t = opt.t * rng.uniform();
                worst = std::max(worst, std::abs(evaluate_V(ctx, t, 1, k, f, pts) -
                                                 evaluate_V2_explicit(ctx, t, k, f, pts)));
            }
        }
        out.push_back(bounded("V2_general_vs_explicit", worst, opt.match_tolerance));
    }

    {
        RandomStream rng(seed, {0x1d, 5});
        const auto p2 = random_points(2, rng, 0.7);
        const auto f2 = gaussian_test_function(p2, rng);
        const auto g0 = generator_check(ctx, 0, 2, f2, p2);
        out.push_back(bounded("generator_V1_bracket", std::abs(g0.estimate - g0.reference), opt.generator_tolerance));
        const auto p3 = random_points(3, rng, 0.7);
        const auto f3 = gaussian_test_function(p3, rng);
        const auto g1 = generator_check(ctx, 1, 2, f3, p3);
        out.push_back(bounded("generator_V2_vanishes", std::abs(g1.raw), opt.generator_tolerance));
    }

    const auto initial = maxwellian_gaussian(cfg.initial);
    // Smooth test density, and a proposal broader still so that the importance
    // weights of the flowed integrands stay bounded.
    QuadratureSpec q = cfg.series.quadrature;
    const double broad = std::max({initial.bandwidth(), std::sqrt(cfg.initial.temperature), cfg.initial.spatial_width});
    const auto smooth = initial.with_bandwidth(broad);
    const auto proposal = std::make_shared<OneParticleDensity>(initial.with_bandwidth(1.5 * broad));
    q.proposal = proposal;
    {
        const PhaseFunction f = product_density(smooth, 2);
        const double exact = initial.total_mass() * initial.total_mass();
        const auto moved = l1_norm(pullback(ctx, -opt.t, f), q, *proposal, 0x150);
        IdentityRecord r = bounded_inclusive("isometry_S2", std::abs(moved.value - exact), opt.mc_sigmas * moved.std_error);
        char buf[96];
        std::snprintf(buf, sizeof buf, "norm %.6g vs %.6g", moved.value, exact);
        r.detail = buf;
        out.push_back(r);
    }
    {
        const PhaseFunction f = product_density(smooth, 2);
        const ClusterIndexSet ground = ClusterIndexSet::standard(1, 1);
        const PhaseFunction a2(2, [&ctx, t = opt.t, f, ground](std::span<const MacroPoint> pts) {
            return apply_cumulant(ctx, t, ground, f, pts);
        });
        const auto e = mc_integrate(a2, {}, 2, q, *proposal, 0xca2);
        out.push_back(bounded_inclusive("cancellation_integral_n2", std::abs(e.value), opt.mc_sigmas * e.std_error));
    }
    return out;
}

} // namespace clusterflow::tools
