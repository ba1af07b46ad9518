#include <clusterflow/dynamics.hpp>
#include <clusterflow/errors.hpp>
#include <clusterflow/random.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

using namespace clusterflow;

namespace {

std::vector<MacroPoint> random_cluster(std::size_t k, std::uint64_t seed, double scale = 1.0)
{
    RandomStream rng(seed);
    std::vector<MacroPoint> pts(k);
    for (auto& p : pts)
        p = {{scale * rng.normal(), scale * rng.normal(), scale * rng.normal()},
             {scale * rng.normal(), scale * rng.normal(), scale * rng.normal()}};
    return pts;
}

const PotentialSpec harmonic{PotentialKind::harmonic_pair, 1.0, 1.0};
const PotentialSpec gaussian{PotentialKind::gaussian_pair, 1.0, 1.0};

} // namespace

TEST(PairPotential, FreeIsZero)
{
    EXPECT_EQ(pair_potential(PotentialSpec{}, {1, 0, 0}), 0.0);
}

TEST(PairPotential, HarmonicHalfSquare)
{
    EXPECT_DOUBLE_EQ(pair_potential(harmonic, {2, 0, 0}), 2.0);
}

TEST(PairPotential, GaussianPeak)
{
    EXPECT_DOUBLE_EQ(pair_potential(gaussian, {0, 0, 0}), 1.0);
}

TEST(PairPotential, Symmetric)
{
    const Vec3 d{0.3, -1.1, 0.7};
    EXPECT_DOUBLE_EQ(pair_potential(gaussian, d), pair_potential(gaussian, -d));
    EXPECT_DOUBLE_EQ(pair_potential(harmonic, d), pair_potential(harmonic, -d));
}

TEST(PairPotential, GradientMatchesFiniteDifference)
{
    const Vec3 d{0.4, -0.2, 0.9};
    const double h = 1e-6;
    const Vec3 g = pair_gradient(gaussian, d);
    for (std::size_t c = 0; c < 3; ++c) {
        Vec3 p = d, m = d;
        p[c] += h;
        m[c] -= h;
        EXPECT_NEAR(g[c], (pair_potential(gaussian, p) - pair_potential(gaussian, m)) / (2 * h), 1e-8);
    }
}

TEST(PotentialSpec, ValidateRejectsBadParameters)
{
    EXPECT_THROW((PotentialSpec{PotentialKind::harmonic_pair, -1.0, 1.0}.validate()), std::invalid_argument);
    EXPECT_THROW((PotentialSpec{PotentialKind::gaussian_pair, 1.0, 0.0}.validate()), std::invalid_argument);
    EXPECT_NO_THROW(harmonic.validate());
}

TEST(PotentialKind, NamesRoundTrip)
{
    for (auto k : {PotentialKind::free, PotentialKind::harmonic_pair, PotentialKind::gaussian_pair})
        EXPECT_EQ(potential_kind_from_string(to_string(k)), k);
    EXPECT_THROW(potential_kind_from_string("lennard_jones"), std::invalid_argument);
}

TEST(ForceOn, FreeIsZero)
{
    const auto pts = random_cluster(3, 1);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(force_on(PotentialSpec{}, pts, i), (Vec3{0, 0, 0}));
}

TEST(ForceOn, HarmonicPair)
{
    std::vector<MacroPoint> pts{{{}, {1, 0, 0}}, {{}, {0, 0, 0}}};
    const Vec3 f = force_on(harmonic, pts, 0);
    EXPECT_DOUBLE_EQ(f.x, -1.0);
    EXPECT_DOUBLE_EQ(f.y, 0.0);
    EXPECT_DOUBLE_EQ(f.z, 0.0);
}

TEST(ForceOn, ThirdLawCancellation)
{
    const auto pts = random_cluster(3, 2);
    Vec3 total;
    for (std::size_t i = 0; i < 3; ++i)
        total += force_on(gaussian, pts, i);
    EXPECT_LT(norm(total), 1e-12);
}

TEST(ForceOn, IndexOutOfRange)
{
    const auto pts = random_cluster(2, 3);
    EXPECT_THROW(force_on(gaussian, pts, 2), std::out_of_range);
}

TEST(AllForces, MatchesForceOn)
{
    const auto pts = random_cluster(4, 4);
    std::vector<Vec3> forces(4);
    all_forces(gaussian, pts, forces);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_LT(norm(forces[i] - force_on(gaussian, pts, i)), 1e-14);
}

TEST(HamiltonianEnergy, Examples)
{
    std::vector<MacroPoint> one{{{2, 0, 0}, {}}};
    EXPECT_DOUBLE_EQ(hamiltonian_energy(PotentialSpec{}, one), 2.0);
    std::vector<MacroPoint> two{{{}, {1, 0, 0}}, {{}, {0, 0, 0}}};
    EXPECT_DOUBLE_EQ(hamiltonian_energy(harmonic, two), 0.5);
}

TEST(FlowMap, FreeStreaming)
{
    std::vector<MacroPoint> pts{{{1, 0, 0}, {0, 0, 0}}};
    const auto out = flow_map(PotentialSpec{}, FlowConfig{}, 2.0, pts);
    EXPECT_EQ(out[0].v, (Vec3{1, 0, 0}));
    EXPECT_EQ(out[0].r, (Vec3{2, 0, 0}));
}

TEST(FlowMap, FreeExactness)
{
    const auto pts = random_cluster(3, 5);
    const double t = 0.37;
    const auto out = flow_map(PotentialSpec{}, FlowConfig{}, t, pts);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(out[i].v, pts[i].v);
        EXPECT_EQ(out[i].r, pts[i].r + t * pts[i].v);
    }
}

TEST(FlowMap, HarmonicTwoBodyHalfPeriod)
{
    // Amplitude 1/2 gives unit reduced frequency for the separation.
    const PotentialSpec half{PotentialKind::harmonic_pair, 0.5, 1.0};
    FlowConfig cfg;
    cfg.step = 1e-3;
    std::vector<MacroPoint> pts{{{0.1, 0.2, 0}, {0.5, 0, 0}}, {{-0.1, 0, 0.3}, {-0.5, 0.2, 0}}};
    const Vec3 d0 = pts[0].r - pts[1].r;
    const Vec3 u0 = pts[0].v - pts[1].v;
    const auto out = flow_map(half, cfg, std::numbers::pi, pts);
    const Vec3 d = out[0].r - out[1].r;
    const Vec3 u = out[0].v - out[1].v;
    EXPECT_LT(norm(d + d0), 1e-6);
    EXPECT_LT(norm(u + u0), 1e-6);
}

TEST(FlowMap, Reversibility)
{
    FlowConfig cfg;
    cfg.step = 1e-3;
    for (const auto& spec : {harmonic, gaussian}) {
        const auto pts = random_cluster(3, 6);
        const auto back = flow_map(spec, cfg, -0.8, flow_map(spec, cfg, 0.8, pts));
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_LT(norm(back[i].v - pts[i].v), 1e-8);
            EXPECT_LT(norm(back[i].r - pts[i].r), 1e-8);
        }
    }
}

TEST(FlowMap, EnergyConservation)
{
    FlowConfig cfg;
    cfg.step = 1e-3;
    const auto pts = random_cluster(4, 7, 0.7);
    const double e0 = hamiltonian_energy(gaussian, pts);
    const auto out = flow_map(gaussian, cfg, 1.0, pts);
    EXPECT_LT(std::abs(hamiltonian_energy(gaussian, out) - e0) / std::max(std::abs(e0), 1.0), 1e-6);
}

TEST(FlowMap, MomentumConservation)
{
    FlowConfig cfg;
    const auto pts = random_cluster(4, 8);
    const auto out = flow_map(gaussian, cfg, 0.5, pts);
    Vec3 p0, p1;
    for (std::size_t i = 0; i < 4; ++i) {
        p0 += pts[i].v;
        p1 += out[i].v;
    }
    EXPECT_LT(norm(p1 - p0), 1e-10 * 500);
}

TEST(FlowMap, PermutationEquivariance)
{
    FlowConfig cfg;
    auto pts = random_cluster(3, 9);
    const auto out = flow_map(gaussian, cfg, 0.3, pts);
    std::vector<MacroPoint> perm{pts[2], pts[0], pts[1]};
    const auto pout = flow_map(gaussian, cfg, 0.3, perm);
    EXPECT_LT(norm(pout[0].r - out[2].r), 1e-13);
    EXPECT_LT(norm(pout[1].r - out[0].r), 1e-13);
    EXPECT_LT(norm(pout[2].v - out[1].v), 1e-13);
}

TEST(FlowMap, StepBudget)
{
    FlowConfig cfg;
    cfg.step = 1e-3;
    cfg.max_steps = 10;
    const auto pts = random_cluster(2, 10);
    EXPECT_THROW(flow_map(harmonic, cfg, 1.0, pts), StepBudgetError);
    EXPECT_NO_THROW(flow_map(harmonic, cfg, 0.005, pts));
}

TEST(FlowMap, ZeroTimeIsIdentity)
{
    const auto pts = random_cluster(3, 11);
    const auto out = flow_map(gaussian, FlowConfig{}, 0.0, pts);
    EXPECT_EQ(out, pts);
}

TEST(FlowConfig, Validate)
{
    FlowConfig cfg;
    cfg.step = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(PhasePoint, ConversionsAreExact)
{
    const MacroPoint xi{{1, 2, 3}, {4, 5, 6}};
    EXPECT_EQ(to_macro(to_phase(xi)), xi);
}
