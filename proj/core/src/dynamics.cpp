#include <clusterflow/dynamics.hpp>
#include <clusterflow/errors.hpp>

#include <algorithm>
#include <stdexcept>
#include <string>

namespace clusterflow {

std::string_view to_string(PotentialKind kind)
{
    switch (kind) {
    case PotentialKind::free: return "free";
    case PotentialKind::harmonic_pair: return "harmonic-pair";
    case PotentialKind::gaussian_pair: return "gaussian-pair";
    }
    return "unknown";
}

PotentialKind potential_kind_from_string(std::string_view name)
{
    if (name == "free") return PotentialKind::free;
    if (name == "harmonic-pair") return PotentialKind::harmonic_pair;
    if (name == "gaussian-pair") return PotentialKind::gaussian_pair;
    throw std::invalid_argument("unknown potential kind '" + std::string(name) +
                                "' (expected free, harmonic-pair or gaussian-pair)");
}

void PotentialSpec::validate() const
{
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
        throw std::invalid_argument("potential amplitude must be finite and >= 0");
    if (kind == PotentialKind::gaussian_pair && !(range > 0.0 && std::isfinite(range)))
        throw std::invalid_argument("gaussian-pair range must be finite and > 0");
}

void FlowConfig::validate() const
{
    if (!(step > 0.0) || !std::isfinite(step))
        throw std::invalid_argument("integrator step must be finite and > 0");
    if (max_steps <= 0)
        throw std::invalid_argument("max_steps must be positive");
}

long FlowConfig::steps_for(double t) const
{
    if (!std::isfinite(t))
        throw std::invalid_argument("flow time must be finite");
    if (t == 0.0)
        return 0;
    // The slack keeps t = m * step from rounding up to m + 1 steps.
    const double ratio = std::abs(t) / step;
    const double n = std::ceil(ratio * (1.0 - 1e-12));
    if (n > static_cast<double>(max_steps))
        throw StepBudgetError("flow of duration " + std::to_string(t) + " needs " + std::to_string(n) +
                              " steps, budget is " + std::to_string(max_steps));
    return std::max(1L, static_cast<long>(n));
}

double pair_potential(const PotentialSpec& spec, const Vec3& d)
{
    switch (spec.kind) {
    case PotentialKind::free: return 0.0;
    case PotentialKind::harmonic_pair: return 0.5 * spec.amplitude * norm2(d);
    case PotentialKind::gaussian_pair:
        return spec.amplitude * std::exp(-norm2(d) / (2.0 * spec.range * spec.range));
    }
    return 0.0;
}

Vec3 pair_gradient(const PotentialSpec& spec, const Vec3& d)
{
    switch (spec.kind) {
    case PotentialKind::free: return {};
    case PotentialKind::harmonic_pair: return spec.amplitude * d;
    case PotentialKind::gaussian_pair: {
        const double s2 = spec.range * spec.range;
        return (-spec.amplitude / s2 * std::exp(-norm2(d) / (2.0 * s2))) * d;
    }
    }
    return {};
}

Vec3 force_on(const PotentialSpec& spec, std::span<const MacroPoint> points, std::size_t i)
{
    if (i >= points.size())
        throw std::out_of_range("force_on: particle index " + std::to_string(i) + " out of range for cluster of " +
                                std::to_string(points.size()));
    Vec3 f;
    for (std::size_t j = 0; j < points.size(); ++j)
        if (j != i)
            f -= pair_gradient(spec, points[i].r - points[j].r);
    return f;
}

void all_forces(const PotentialSpec& spec, std::span<const MacroPoint> points, std::span<Vec3> forces)
{
    for (auto& f : forces)
        f = {};
    if (!spec.interacting())
        return;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            const Vec3 g = pair_gradient(spec, points[i].r - points[j].r);
            forces[i] -= g;
            forces[j] += g;
        }
    }
}

double hamiltonian_energy(const PotentialSpec& spec, std::span<const MacroPoint> points)
{
    double kinetic = 0.0;
    double potential = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        kinetic += 0.5 * norm2(points[i].v);
        for (std::size_t j = i + 1; j < points.size(); ++j)
            potential += pair_potential(spec, points[i].r - points[j].r);
    }
    return kinetic + potential;
}

namespace {

// Small clusters dominate; keep force scratch on the stack when possible.
constexpr std::size_t inline_capacity = 16;

void verlet(const PotentialSpec& spec, double dt, long steps, std::span<MacroPoint> points, std::span<Vec3> acc)
{
    const double half = 0.5 * dt;
    all_forces(spec, points, acc);
    for (long s = 0; s < steps; ++s) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            points[i].v += half * acc[i];
            points[i].r += dt * points[i].v;
        }
        all_forces(spec, points, acc);
        for (std::size_t i = 0; i < points.size(); ++i)
            points[i].v += half * acc[i];
    }
}

} // namespace

void flow_in_place(const PotentialSpec& spec, const FlowConfig& cfg, double t, std::span<MacroPoint> points)
{
    if (t == 0.0 || points.empty())
        return;
    if (!spec.interacting() || points.size() == 1) {
        for (auto& p : points)
            p.r += t * p.v;
        return;
    }
    const long steps = cfg.steps_for(t);
    const double dt = t / static_cast<double>(steps);
    if (points.size() <= inline_capacity) {
        std::array<Vec3, inline_capacity> scratch;
        verlet(spec, dt, steps, points, std::span<Vec3>(scratch.data(), points.size()));
    }
    else {
        std::vector<Vec3> scratch(points.size());
        verlet(spec, dt, steps, points, scratch);
    }
}

std::vector<MacroPoint> flow_map(const PotentialSpec& spec, const FlowConfig& cfg, double t,
                                 std::span<const MacroPoint> points)
{
    std::vector<MacroPoint> out(points.begin(), points.end());
    cfg.steps_for(t); // the budget applies to every requested flow, trivial or not
    flow_in_place(spec, cfg, t, out);
    return out;
}

} // namespace clusterflow
