#pragma once

// Hamiltonian flows of small particle clusters in (velocity, position) variables.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clusterflow {

struct Vec3
{
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline bool is_finite(const Vec3& a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

/// Macroscopic variables xi = (v, r) of one particle.
struct MacroPoint
{
    Vec3 v;
    Vec3 r;

    friend constexpr bool operator==(const MacroPoint&, const MacroPoint&) = default;
};

inline bool is_finite(const MacroPoint& p) { return is_finite(p.v) && is_finite(p.r); }

/// Canonical coordinates x = (q, p). Unit mass makes this the same pair as
/// MacroPoint with the roles renamed; the conversions are exact.
struct PhasePoint
{
    Vec3 p;
    Vec3 q;

    friend constexpr bool operator==(const PhasePoint&, const PhasePoint&) = default;
};

constexpr MacroPoint to_macro(const PhasePoint& x) { return {x.p, x.q}; }
constexpr PhasePoint to_phase(const MacroPoint& xi) { return {xi.v, xi.r}; }

enum class PotentialKind { free, harmonic_pair, gaussian_pair };

std::string_view to_string(PotentialKind kind);
PotentialKind potential_kind_from_string(std::string_view name);

/// Smooth pair interaction Phi(d).
///   free:          0
///   harmonic_pair: amplitude * |d|^2 / 2
///   gaussian_pair: amplitude * exp(-|d|^2 / (2 range^2))
struct PotentialSpec
{
    PotentialKind kind = PotentialKind::free;
    double amplitude = 0.0;
    double range = 1.0;

    /// Throws std::invalid_argument when amplitude < 0 or range <= 0.
    void validate() const;
    bool interacting() const { return kind != PotentialKind::free && amplitude != 0.0; }
};

enum class FlowScheme { velocity_verlet };

struct FlowConfig
{
    double step = 1e-3;
    FlowScheme scheme = FlowScheme::velocity_verlet;
    long max_steps = 10'000'000;

    void validate() const;
    /// Number of integrator steps used for a flow of duration |t|; throws
    /// StepBudgetError when it exceeds max_steps.
    long steps_for(double t) const;
};

double pair_potential(const PotentialSpec& spec, const Vec3& d);

/// Gradient of Phi with respect to the displacement d.
Vec3 pair_gradient(const PotentialSpec& spec, const Vec3& d);

/// -sum_{j != i} grad_{r_i} Phi(r_i - r_j). Throws std::out_of_range on a bad index.
Vec3 force_on(const PotentialSpec& spec, std::span<const MacroPoint> points, std::size_t i);

/// Fills forces[i] = force_on(spec, points, i) for every i using pairwise
/// antisymmetric accumulation.
void all_forces(const PotentialSpec& spec, std::span<const MacroPoint> points, std::span<Vec3> forces);

double hamiltonian_energy(const PotentialSpec& spec, std::span<const MacroPoint> points);

/// Evolves the cluster in place to signed time t. Negative t integrates with a
/// negated step; there is no trajectory inversion. Free clusters stream exactly.
void flow_in_place(const PotentialSpec& spec, const FlowConfig& cfg, double t, std::span<MacroPoint> points);

std::vector<MacroPoint> flow_map(const PotentialSpec& spec, const FlowConfig& cfg, double t,
                                 std::span<const MacroPoint> points);

} // namespace clusterflow
