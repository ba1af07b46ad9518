#include <clusterflow/errors.hpp>
#include <clusterflow/flow_operators.hpp>

#include <string>
#include <utility>

namespace clusterflow {

PhaseFunction::PhaseFunction(std::size_t arity, Evaluator evaluator, std::optional<double> integrability_hint)
    : arity_(arity), evaluator_(std::make_shared<const Evaluator>(std::move(evaluator))), hint_(integrability_hint)
{
    if (arity_ == 0)
        throw ArityError("phase function arity must be >= 1");
    if (!*evaluator_)
        throw std::invalid_argument("phase function needs an evaluator");
}

double PhaseFunction::operator()(std::span<const MacroPoint> points) const
{
    if (points.size() != arity_)
        throw ArityError("phase function of arity " + std::to_string(arity_) + " applied to " +
                         std::to_string(points.size()) + " points");
    return (*evaluator_)(points);
}

void evolve_points(const OperatorContext& ctx, double s, std::span<MacroPoint> points)
{
    flow_in_place(ctx.potential, ctx.flow, s, points);
}

void scatter_points(const OperatorContext& ctx, double t, std::span<MacroPoint> points)
{
    if (t == 0.0 || points.size() < 2 || !ctx.potential.interacting())
        return;
    flow_in_place(ctx.potential, ctx.flow, -t, points);
    for (auto& p : points)
        p.r += t * p.v;
}

namespace {

void check_arity(const PhaseFunction& f, std::span<const MacroPoint> points)
{
    if (points.size() != f.arity())
        throw ArityError("operator on arity-" + std::to_string(f.arity()) + " function applied to " +
                         std::to_string(points.size()) + " points");
}

} // namespace

double apply_S(const OperatorContext& ctx, double t, const PhaseFunction& f, std::span<const MacroPoint> points)
{
    check_arity(f, points);
    std::vector<MacroPoint> moved(points.begin(), points.end());
    evolve_points(ctx, -t, moved);
    return f.evaluate_unchecked(moved);
}

double apply_S_hat(const OperatorContext& ctx, double t, const PhaseFunction& f, std::span<const MacroPoint> points)
{
    check_arity(f, points);
    std::vector<MacroPoint> moved(points.begin(), points.end());
    scatter_points(ctx, t, moved);
    return f.evaluate_unchecked(moved);
}

PhaseFunction pullback(const OperatorContext& ctx, double s, PhaseFunction f)
{
    const auto arity = f.arity();
    auto hint = f.integrability_hint(); // flows preserve Liouville measure
    return PhaseFunction(
        arity,
        [ctx, s, f = std::move(f)](std::span<const MacroPoint> points) {
            std::vector<MacroPoint> moved(points.begin(), points.end());
            evolve_points(ctx, s, moved);
            return f.evaluate_unchecked(moved);
        },
        hint);
}

PhaseFunction pullback_each(const OperatorContext& ctx, double s, PhaseFunction f)
{
    const auto arity = f.arity();
    auto hint = f.integrability_hint();
    return PhaseFunction(
        arity,
        [ctx, s, f = std::move(f)](std::span<const MacroPoint> points) {
            std::vector<MacroPoint> moved(points.begin(), points.end());
            for (std::size_t i = 0; i < moved.size(); ++i)
                evolve_points(ctx, s, std::span<MacroPoint>(&moved[i], 1));
            return f.evaluate_unchecked(moved);
        },
        hint);
}

PhaseFunction scattering_pullback(const OperatorContext& ctx, double t, PhaseFunction f)
{
    const auto arity = f.arity();
    auto hint = f.integrability_hint();
    return PhaseFunction(
        arity,
        [ctx, t, f = std::move(f)](std::span<const MacroPoint> points) {
            std::vector<MacroPoint> moved(points.begin(), points.end());
            scatter_points(ctx, t, moved);
            return f.evaluate_unchecked(moved);
        },
        hint);
}

PhaseFunction scattering_pullback_composed(const OperatorContext& ctx, double t, PhaseFunction f)
{
    // S_k(-t) [ prod_i S_1(t, i) f ]
    return pullback(ctx, -t, pullback_each(ctx, t, std::move(f)));
}

} // namespace clusterflow
