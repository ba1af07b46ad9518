#pragma once

// Evolution operators S_k(s) and scattering operators as pullbacks of phase
// functions along cluster flows. Operators compose lazily: applying one yields
// a new PhaseFunction whose evaluator runs the flow and then the original.

#include <clusterflow/dynamics.hpp>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace clusterflow {

/// Symmetric function of `arity` macroscopic points.
class PhaseFunction
{
public:
    using Evaluator = std::function<double(std::span<const MacroPoint>)>;

    PhaseFunction(std::size_t arity, Evaluator evaluator, std::optional<double> integrability_hint = {});

    std::size_t arity() const { return arity_; }
    const std::optional<double>& integrability_hint() const { return hint_; }

    /// Throws ArityError unless points.size() == arity().
    double operator()(std::span<const MacroPoint> points) const;

    /// Skips the arity check; for inner loops that already guarantee it.
    double evaluate_unchecked(std::span<const MacroPoint> points) const { return (*evaluator_)(points); }

private:
    std::size_t arity_;
    std::shared_ptr<const Evaluator> evaluator_;
    std::optional<double> hint_;
};

struct OperatorContext
{
    PotentialSpec potential;
    FlowConfig flow;

    void validate() const
    {
        potential.validate();
        flow.validate();
    }
};

/// Replaces the cluster by its image under the interacting flow at signed time s.
void evolve_points(const OperatorContext& ctx, double s, std::span<MacroPoint> points);

/// Replaces the cluster by (V_i(-t), R_i(-t) + t V_i(-t)): interacting backward
/// flow followed by free forward streaming of every particle. Single particles
/// and non-interacting clusters are left untouched.
void scatter_points(const OperatorContext& ctx, double t, std::span<MacroPoint> points);

/// (S_k(-t) f)(xi) = f(Xi(-t, xi)).
double apply_S(const OperatorContext& ctx, double t, const PhaseFunction& f, std::span<const MacroPoint> points);

/// Scattering operator S_k(-t) prod_i S_1(t, i) evaluated through scatter_points.
double apply_S_hat(const OperatorContext& ctx, double t, const PhaseFunction& f, std::span<const MacroPoint> points);

/// Lazy S_k(s) f: the returned function evaluates f at Xi(s, .).
PhaseFunction pullback(const OperatorContext& ctx, double s, PhaseFunction f);

/// Lazy prod_i S_1(s, i) f: every argument streams on its own.
PhaseFunction pullback_each(const OperatorContext& ctx, double s, PhaseFunction f);

/// Lazy scattering operator built from scatter_points.
PhaseFunction scattering_pullback(const OperatorContext& ctx, double t, PhaseFunction f);

/// Lazy scattering operator built by composing S_k(-t) with single-particle
/// forward flows, without scatter_points. Used to cross-check it.
PhaseFunction scattering_pullback_composed(const OperatorContext& ctx, double t, PhaseFunction f);

} // namespace clusterflow
