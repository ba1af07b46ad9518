#include <clusterflow/errors.hpp>
#include <clusterflow/exact_sum.hpp>
#include <clusterflow/hierarchy_solver.hpp>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace clusterflow {

using nlohmann::json;

std::vector<MacroPoint> default_probes(double temperature, double spatial_width)
{
    const double sv = std::sqrt(temperature);
    const double sr = spatial_width;
    auto p = [&](Vec3 v, Vec3 r) { return MacroPoint{sv * v, sr * r}; };
    return {
        p({0, 0, 0}, {0, 0, 0}),
        p({0.5, 0, 0}, {0, 0, 0}),
        p({0, 0, 0}, {0.5, 0, 0}),
        p({0.5, 0.5, 0}, {-0.5, 0, 0.5}),
        p({1, 0, 0}, {0, 1, 0}),
        p({-1, 0.5, 0}, {0.5, 0, -1}),
        p({2, 0, 0}, {0, 0, 0}),
        p({0, 0, 0}, {0, 2, 0}),
    };
}

std::vector<ProbeConfiguration> default_probe_configurations(std::size_t k, double temperature, double spatial_width)
{
    const auto base = default_probes(temperature, spatial_width);
    std::vector<ProbeConfiguration> out;
    for (std::size_t j = 0; j < base.size(); ++j) {
        ProbeConfiguration c;
        for (std::size_t i = 0; i < k; ++i)
            c.push_back(base[(j + i) % base.size()]);
        out.push_back(std::move(c));
    }
    return out;
}

std::string to_string(Observation o)
{
    return o == Observation::pointwise ? "pointwise" : "mollified";
}

Observation observation_from_string(const std::string& s)
{
    if (s == "pointwise")
        return Observation::pointwise;
    if (s == "mollified")
        return Observation::mollified;
    throw std::invalid_argument("unknown observation mode '" + s + "' (expected pointwise or mollified)");
}

void SeriesConfig::validate() const
{
    if (truncation_order > max_expansion_order)
        throw OrderCapError("truncation order " + std::to_string(truncation_order) + " exceeds the cap " +
                            std::to_string(max_expansion_order));
    if (arity == 0)
        throw std::invalid_argument("series arity must be >= 1");
    if (times.empty())
        throw std::invalid_argument("series needs at least one time");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i]))
            throw std::invalid_argument("series times must be finite");
        if (i > 0 && times[i] < times[i - 1])
            throw std::invalid_argument("series times must be sorted");
    }
    if (!(observation_bandwidth > 0.0))
        throw std::invalid_argument("observation bandwidth must be positive");
    quadrature.validate();
}

double theorem_threshold()
{
    return std::exp(-10.0) / (1.0 + std::exp(-9.0));
}

double functional_threshold(std::size_t k)
{
    return std::exp(-(3.0 * static_cast<double>(k) + 2.0));
}

ConvergenceReport convergence_report(const OneParticleDensity& initial, std::size_t k, std::size_t orders)
{
    if (k == 0)
        throw std::invalid_argument("arity must be >= 1");
    ConvergenceReport rep;
    rep.arity = k;
    const double a = l1_norm(initial).value;
    const double e = std::numbers::e;
    rep.initial_norm = a;
    rep.theorem_threshold = theorem_threshold();
    rep.functional_threshold_k = functional_threshold(k);
    rep.in_regime = a < rep.theorem_threshold;
    rep.functional_in_regime = a < rep.functional_threshold_k;

    const double inf = std::numeric_limits<double>::infinity();
    const double ak = std::pow(a, static_cast<double>(k));
    const double big = std::exp(3.0 * static_cast<double>(k) + 2.0);
    const double first = a * e < 1.0 ? ak * e * e / (1.0 - a * e) : inf;
    const double second = a * big < 1.0 ? ak * big * (a * big) / (1.0 - a * big) : inf;
    rep.functional_majorant = first + second;
    rep.solution_majorant = (a < 1.0 && a * e < 1.0) ? a * e * e / (1.0 - a) * e * e / (1.0 - e * a) : inf;

    for (std::size_t n = 0; n <= orders; ++n)
        rep.term_bounds.push_back(std::exp(static_cast<double>(n) + 2.0) *
                                  std::pow(a, static_cast<double>(k + n)));
    return rep;
}

std::string describe_potential(const PotentialSpec& p)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s %.17g %.17g", std::string(to_string(p.kind)).c_str(), p.amplitude, p.range);
    return buf;
}

const TraceCell& SolutionTrace::cell(std::size_t time_index, std::size_t probe, std::size_t order) const
{
    const std::size_t orders = truncation_order + 1;
    const std::size_t i = (time_index * probes.size() + probe) * orders + order;
    if (time_index >= times.size() || probe >= probes.size() || order >= orders || i >= cells.size())
        throw std::out_of_range("trace cell out of range");
    return cells[i];
}

namespace {

std::string fmt(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json point_json(const MacroPoint& p)
{
    return json{{"v", {p.v.x, p.v.y, p.v.z}}, {"r", {p.r.x, p.r.y, p.r.z}}};
}

MacroPoint point_from_json(const json& j)
{
    const auto& v = j.at("v");
    const auto& r = j.at("r");
    return MacroPoint{{v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()},
                      {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()}};
}

json estimate_json(const MCEstimate& e)
{
    return json{{"value", e.value}, {"std_error", e.std_error}, {"n_samples", e.n_samples},
                {"unreliable", e.unreliable}};
}

MCEstimate estimate_from_json(const json& j)
{
    MCEstimate e;
    e.value = j.at("value").get<double>();
    e.std_error = j.at("std_error").get<double>();
    e.n_samples = j.at("n_samples").get<std::size_t>();
    e.unreliable = j.at("unreliable").get<bool>();
    return e;
}

double finite_or_max(double x)
{
    return std::isfinite(x) ? x : std::numeric_limits<double>::max();
}

} // namespace

void SolutionTrace::write_csv(std::ostream& out) const
{
    out << "t,probe_id,order,value,std_error,cumulative\n";
    for (const auto& c : cells)
        out << fmt(c.t) << ',' << c.probe_id << ',' << c.order << ',' << fmt(c.value) << ',' << fmt(c.std_error)
            << ',' << fmt(c.cumulative) << '\n';
}

std::string SolutionTrace::to_json(const std::string& config_json) const
{
    json j;
    j["kind"] = "series";
    j["arity"] = arity;
    j["truncation_order"] = truncation_order;
    j["renormalized"] = renormalized;
    j["observation"] = to_string(observation);
    j["bandwidth"] = bandwidth;
    j["potential"] = potential;
    j["times"] = times;
    json probes_j = json::array();
    for (const auto& p : probes) {
        json cfg = json::array();
        for (const auto& x : p)
            cfg.push_back(point_json(x));
        probes_j.push_back(cfg);
    }
    j["probes"] = probes_j;
    json cells_j = json::array();
    for (const auto& c : cells)
        cells_j.push_back({{"t", c.t},
                           {"probe_id", c.probe_id},
                           {"order", c.order},
                           {"value", c.value},
                           {"std_error", c.std_error},
                           {"cumulative", c.cumulative},
                           {"cumulative_std_error", c.cumulative_std_error}});
    j["cells"] = cells_j;
    json norms = json::array();
    for (const auto& per_time : term_norms) {
        json row = json::array();
        for (const auto& e : per_time)
            row.push_back(estimate_json(e));
        norms.push_back(row);
    }
    j["term_norms"] = norms;
    const auto& cr = convergence;
    j["convergence"] = {{"initial_norm", cr.initial_norm},
                        {"theorem_threshold", cr.theorem_threshold},
                        {"functional_threshold_k", cr.functional_threshold_k},
                        {"in_regime", cr.in_regime},
                        {"functional_in_regime", cr.functional_in_regime},
                        {"functional_majorant", finite_or_max(cr.functional_majorant)},
                        {"solution_majorant", finite_or_max(cr.solution_majorant)},
                        {"term_bounds", cr.term_bounds}};
    if (!config_json.empty())
        j["config"] = json::parse(config_json);
    return j.dump(2);
}

SolutionTrace SolutionTrace::from_json(const std::string& text)
{
    const json j = json::parse(text);
    if (j.value("kind", std::string{}) != "series")
        throw std::invalid_argument("document is not a series trace");
    SolutionTrace tr;
    tr.arity = j.at("arity").get<std::size_t>();
    tr.truncation_order = j.at("truncation_order").get<std::size_t>();
    tr.renormalized = j.at("renormalized").get<bool>();
    tr.observation = observation_from_string(j.at("observation").get<std::string>());
    tr.bandwidth = j.at("bandwidth").get<double>();
    tr.potential = j.at("potential").get<std::string>();
    tr.times = j.at("times").get<std::vector<double>>();
    for (const auto& p : j.at("probes")) {
        ProbeConfiguration c;
        for (const auto& x : p)
            c.push_back(point_from_json(x));
        tr.probes.push_back(std::move(c));
    }
    for (const auto& c : j.at("cells"))
        tr.cells.push_back({c.at("t").get<double>(), c.at("probe_id").get<std::size_t>(),
                            c.at("order").get<std::size_t>(), c.at("value").get<double>(),
                            c.at("std_error").get<double>(), c.at("cumulative").get<double>(),
                            c.at("cumulative_std_error").get<double>()});
    for (const auto& row : j.at("term_norms")) {
        std::vector<MCEstimate> r;
        for (const auto& e : row)
            r.push_back(estimate_from_json(e));
        tr.term_norms.push_back(std::move(r));
    }
    const auto& cr = j.at("convergence");
    tr.convergence.arity = tr.arity;
    tr.convergence.initial_norm = cr.at("initial_norm").get<double>();
    tr.convergence.theorem_threshold = cr.at("theorem_threshold").get<double>();
    tr.convergence.functional_threshold_k = cr.at("functional_threshold_k").get<double>();
    tr.convergence.in_regime = cr.at("in_regime").get<bool>();
    tr.convergence.functional_in_regime = cr.at("functional_in_regime").get<bool>();
    tr.convergence.functional_majorant = cr.at("functional_majorant").get<double>();
    tr.convergence.solution_majorant = cr.at("solution_majorant").get<double>();
    tr.convergence.term_bounds = cr.at("term_bounds").get<std::vector<double>>();
    if (tr.cells.size() != tr.times.size() * tr.probes.size() * (tr.truncation_order + 1))
        throw std::invalid_argument("series trace has an inconsistent cell count");
    return tr;
}

namespace {

double factorial_d(std::size_t n)
{
    double r = 1.0;
    for (std::size_t i = 2; i <= n; ++i)
        r *= static_cast<double>(i);
    return r;
}

std::uint64_t stream_key(std::uint64_t salt, std::size_t probe, std::size_t order)
{
    return (salt << 40) ^ (static_cast<std::uint64_t>(probe) << 8) ^ static_cast<std::uint64_t>(order);
}

constexpr std::uint64_t salt_series = 1;
constexpr std::uint64_t salt_norms = 2;
constexpr std::uint64_t salt_functional = 3;
constexpr std::uint64_t salt_residual = 4;
constexpr std::uint64_t salt_mollified = 5;

std::vector<MacroPoint> joined(const ProbeConfiguration& probe, std::span<const MacroPoint> extra)
{
    std::vector<MacroPoint> all(probe);
    all.insert(all.end(), extra.begin(), extra.end());
    return all;
}

/// Pointwise cumulant term with the initial product density, divided by n!.
double cumulant_integrand(const OperatorContext& ctx, double t, std::size_t k, std::size_t n,
                          const PhaseFunction& product, std::span<const MacroPoint> all)
{
    return apply_cumulant(ctx, t, ClusterIndexSet::standard(k, n), product, all) / factorial_d(n);
}

/// Mollified order-n term for all probes at once. The density term is
///   (1/n!) int dx prod g0(x_i) sum_{S subset singles} (-1)^{n-|S|} prod_{l<k} K_h(p_l - X_l^{Y+S}(t, x)),
/// obtained by moving every block of a partition along its own forward flow;
/// only the block carrying the cluster reaches the kernels.
std::vector<MCEstimate> mollified_term(const OneParticleDensity& g0, std::size_t k, std::size_t n, double t,
                                       const OperatorContext& ctx, const SeriesConfig& cfg,
                                       const std::vector<ProbeConfiguration>& probes, std::uint64_t stream)
{
    const double h = cfg.observation_bandwidth;
    if (k == 1 && n == 0) {
        std::vector<MCEstimate> out;
        for (const auto& p : probes)
            out.push_back({mollified_free_transport(g0, t, h, p[0]), 0.0, 0, false});
        return out;
    }
    const double inv_fact = 1.0 / factorial_d(n);
    MultiIntegrand integrand = [&](std::span<const MacroPoint> x, std::span<double> out) {
        double weight = inv_fact;
        for (const auto& xi : x)
            weight *= g0.evaluate(xi);
        if (weight == 0.0)
            return;
        std::vector<IntegerWeightedSum> sums(probes.size());
        std::vector<MacroPoint> block;
        for (std::uint32_t subset = 0; subset < (1u << n); ++subset) {
            block.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
            for (std::size_t s = 0; s < n; ++s)
                if (subset & (1u << s))
                    block.push_back(x[k + s]);
            evolve_points(ctx, t, block);
            const int size = std::popcount(subset);
            const std::int64_t sign = ((static_cast<int>(n) - size) % 2 == 0) ? 1 : -1;
            for (std::size_t p = 0; p < probes.size(); ++p) {
                double kern = 1.0;
                for (std::size_t l = 0; l < k; ++l)
                    kern *= gaussian_kernel(probes[p][l], block[l], h);
                sums[p].add(sign, kern);
            }
        }
        for (std::size_t p = 0; p < probes.size(); ++p)
            out[p] = weight * sums[p].total();
    };
    return mc_integrate_multi(k + n, probes.size(), integrand, cfg.quadrature, g0, stream);
}

} // namespace

MCEstimate series_term(const OneParticleDensity& initial, std::size_t k, std::size_t n, double t,
                       const OperatorContext& ctx, const SeriesConfig& cfg, const ProbeConfiguration& probe,
                       std::uint64_t stream)
{
    if (probe.size() != k)
        throw ArityError("probe configuration does not match the series arity");
    if (n > max_expansion_order)
        throw OrderCapError("series order exceeds the cap");
    const PhaseFunction product = product_density(initial, k + n);
    MultiIntegrand integrand = [&](std::span<const MacroPoint> extra, std::span<double> out) {
        const auto all = joined(probe, extra);
        out[0] = cumulant_integrand(ctx, t, k, n, product, all);
    };
    return mc_integrate_multi(n, 1, integrand, cfg.quadrature, initial, stream).front();
}

SolutionTrace solve_series_gk(const OneParticleDensity& initial, std::size_t k, const SeriesConfig& cfg,
                              const OperatorContext& ctx, const std::vector<ProbeConfiguration>& probes)
{
    cfg.validate();
    ctx.validate();
    if (k == 0)
        throw std::invalid_argument("series arity must be >= 1");
    for (const auto& p : probes)
        if (p.size() != k)
            throw ArityError("probe configuration does not match the series arity");

    SolutionTrace tr;
    tr.arity = k;
    tr.truncation_order = cfg.truncation_order;
    tr.renormalized = cfg.renormalized;
    tr.observation = cfg.observation;
    tr.bandwidth = cfg.observation == Observation::mollified ? cfg.observation_bandwidth : initial.bandwidth();
    tr.potential = describe_potential(ctx.potential);
    tr.times = cfg.times;
    tr.probes = probes;
    tr.convergence = convergence_report(initial, k, cfg.truncation_order);

    const std::size_t orders = cfg.truncation_order + 1;
    for (double t : cfg.times) {
        std::vector<std::vector<MCEstimate>> terms(probes.size(), std::vector<MCEstimate>(orders));
        for (std::size_t n = 0; n < orders; ++n) {
            if (cfg.observation == Observation::mollified) {
                const auto est = mollified_term(initial, k, n, t, ctx, cfg, probes, stream_key(salt_mollified, 0, n));
                for (std::size_t p = 0; p < probes.size(); ++p)
                    terms[p][n] = est[p];
            }
            else {
                for (std::size_t p = 0; p < probes.size(); ++p)
                    terms[p][n] = series_term(initial, k, n, t, ctx, cfg, probes[p], stream_key(salt_series, p, n));
            }
        }
        for (std::size_t p = 0; p < probes.size(); ++p) {
            double cum = 0.0, var = 0.0;
            for (std::size_t n = 0; n < orders; ++n) {
                cum += terms[p][n].value;
                var += terms[p][n].std_error * terms[p][n].std_error;
                tr.cells.push_back({t, p, n, terms[p][n].value, terms[p][n].std_error, cum, std::sqrt(var)});
            }
        }

        // Free streaming carries most of the mass at short times, so the
        // streamed initial density keeps the importance weights bounded.
        const StreamedDensity streamed(std::make_shared<OneParticleDensity>(initial), t);
        std::vector<MCEstimate> norms(orders);
        for (std::size_t n = 0; n < orders; ++n) {
            const PhaseFunction product = product_density(initial, k + n);
            MultiIntegrand integrand = [&](std::span<const MacroPoint> all, std::span<double> out) {
                out[0] = std::abs(cumulant_integrand(ctx, t, k, n, product, all));
            };
            norms[n] = mc_integrate_multi(k + n, 1, integrand, cfg.quadrature, streamed, stream_key(salt_norms, 0, n))
                           .front();
        }
        tr.term_norms.push_back(norms);
    }
    tr.convergence.term_norms = tr.term_norms.empty() ? std::vector<MCEstimate>{} : tr.term_norms.back();
    return tr;
}

SolutionTrace solve_series_g1(const OneParticleDensity& initial, const SeriesConfig& cfg, const OperatorContext& ctx,
                              const std::vector<MacroPoint>& probes)
{
    std::vector<ProbeConfiguration> configs;
    for (const auto& p : probes)
        configs.push_back({p});
    return solve_series_gk(initial, 1, cfg, ctx, configs);
}

FunctionalResult marginal_functional(std::size_t k, double t, std::shared_ptr<const SampleableDensity> g1_t,
                                     const SeriesConfig& cfg, const OperatorContext& ctx,
                                     const std::vector<ProbeConfiguration>& probes)
{
    cfg.validate();
    ctx.validate();
    if (k < 2)
        throw std::invalid_argument("marginal functionals need k >= 2");
    if (!g1_t)
        throw std::invalid_argument("marginal functional needs a one-particle density");
    FunctionalResult res;
    res.arity = k;
    res.t = t;
    res.renormalized = cfg.renormalized;
    res.g1_norm = g1_t->total_mass();
    res.threshold = functional_threshold(k);
    res.in_regime = res.g1_norm < res.threshold;
    if (!res.in_regime) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "one-particle norm %.6g is not below the functional threshold %.6g",
                      res.g1_norm, res.threshold);
        res.warning = buf;
    }
    for (std::size_t p = 0; p < probes.size(); ++p) {
        if (probes[p].size() != k)
            throw ArityError("probe configuration does not match the functional arity");
        FunctionalValue fv;
        fv.probe_id = p;
        double var = 0.0;
        for (std::size_t n = 0; n <= cfg.truncation_order; ++n) {
            const PhaseFunction product = product_density(g1_t, k + n);
            auto e = cfg.renormalized
                         ? apply_V_renormalized(ctx, t, n, k, product, probes[p], cfg.quadrature, *g1_t,
                                                stream_key(salt_functional, p, n))
                         : apply_V(ctx, t, n, k, product, probes[p], cfg.quadrature, *g1_t,
                                   stream_key(salt_functional, p, n));
            e.value /= factorial_d(n);
            e.std_error /= factorial_d(n);
            fv.cumulative += e.value;
            var += e.std_error * e.std_error;
            fv.terms.push_back(e);
        }
        fv.cumulative_std_error = std::sqrt(var);
        res.values.push_back(std::move(fv));
    }
    return res;
}

CollisionEstimate collision_integral(const MacroPoint& xi1, double t, std::shared_ptr<const SampleableDensity> g1_t,
                                     const SeriesConfig& cfg, const OperatorContext& ctx, double dv,
                                     std::uint64_t stream)
{
    cfg.validate();
    ctx.validate();
    if (!g1_t)
        throw std::invalid_argument("collision integral needs a one-particle density");
    if (!(dv > 1e-8) || !std::isfinite(dv))
        throw std::invalid_argument("velocity difference step is degenerate");
    CollisionEstimate res;
    if (!ctx.potential.interacting()) {
        res.terms.assign(cfg.truncation_order + 1, MCEstimate{});
        return res;
    }
    double var = 0.0;
    for (std::size_t n = 0; n <= cfg.truncation_order; ++n) {
        const PhaseFunction product = product_density(g1_t, 2 + n);
        const double inv_fact = 1.0 / factorial_d(n);
        MultiIntegrand integrand = [&](std::span<const MacroPoint> extra, std::span<double> out) {
            std::vector<MacroPoint> all;
            all.reserve(2 + n);
            all.push_back(xi1);
            all.insert(all.end(), extra.begin(), extra.end());
            const Vec3 grad = pair_gradient(ctx.potential, xi1.r - extra[0].r);
            const double g[3] = {grad.x, grad.y, grad.z};
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) {
                if (g[c] == 0.0)
                    continue;
                auto at = [&](double h) {
                    auto shifted = all;
                    double* comp = c == 0 ? &shifted[0].v.x : c == 1 ? &shifted[0].v.y : &shifted[0].v.z;
                    *comp += h;
                    return evaluate_V(ctx, t, n, 2, product, shifted, cfg.renormalized);
                };
                sum += g[c] * (at(dv) - at(-dv)) / (2.0 * dv);
            }
            out[0] = sum * inv_fact;
        };
        const auto e = mc_integrate_multi(1 + n, 1, integrand, cfg.quadrature, *g1_t,
                                          stream_key(salt_functional, stream, 100 + n))
                           .front();
        res.value += e.value;
        var += e.std_error * e.std_error;
        res.terms.push_back(e);
    }
    res.std_error = std::sqrt(var);
    return res;
}

void ResidualSpec::validate() const
{
    if (!(dr > 0.0) || !std::isfinite(dr))
        throw std::invalid_argument("residual dr must be positive");
    if (!(dv > 1e-8) || !std::isfinite(dv))
        throw std::invalid_argument("residual dv must exceed 1e-8");
    if (!(mc_sigmas > 0.0))
        throw std::invalid_argument("residual mc_sigmas must be positive");
}

bool ResidualReport::all_within() const
{
    return std::all_of(points.begin(), points.end(), [](const ResidualPoint& p) { return p.within; });
}

namespace {

/// Three-point first derivative weights at the middle of (t - hm, t, t + hp).
struct ThreePoint
{
    double wm, w0, wp;
};

ThreePoint three_point(double hm, double hp)
{
    return {-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))};
}

/// Left-hand side of the kinetic equation for one probe and one order, with
/// the full and halved difference steps evaluated on the same samples.
/// Channels: 0 half-step time derivative, 1 half-step transport, 2 full-step
/// lhs, 3 half-step lhs.
std::vector<MCEstimate> lhs_channels(const OneParticleDensity& initial, std::size_t n, double t, double hm, double hp,
                                     double dr, const OperatorContext& ctx, const SeriesConfig& cfg,
                                     const MacroPoint& probe, std::uint64_t stream)
{
    const PhaseFunction product = product_density(initial, 1 + n);
    const ThreePoint full = three_point(hm, hp);
    const ThreePoint half = three_point(hm / 2, hp / 2);
    MultiIntegrand integrand = [&](std::span<const MacroPoint> extra, std::span<double> out) {
        auto value = [&](double time, const MacroPoint& xi) {
            std::vector<MacroPoint> all{xi};
            all.insert(all.end(), extra.begin(), extra.end());
            return cumulant_integrand(ctx, time, 1, n, product, all);
        };
        const double center = value(t, probe);
        auto dt = [&](const ThreePoint& w, double m, double p) {
            return w.wm * value(t - m, probe) + w.w0 * center + w.wp * value(t + p, probe);
        };
        auto transport = [&](double h) {
            double s = 0.0;
            const double v[3] = {probe.v.x, probe.v.y, probe.v.z};
            for (int c = 0; c < 3; ++c) {
                if (v[c] == 0.0)
                    continue;
                MacroPoint plus = probe, minus = probe;
                double* pc = c == 0 ? &plus.r.x : c == 1 ? &plus.r.y : &plus.r.z;
                double* mc = c == 0 ? &minus.r.x : c == 1 ? &minus.r.y : &minus.r.z;
                *pc += h;
                *mc -= h;
                s += v[c] * (value(t, plus) - value(t, minus)) / (2.0 * h);
            }
            return s;
        };
        const double d_half = dt(half, hm / 2, hp / 2);
        const double tr_half = transport(dr / 2);
        out[0] = d_half;
        out[1] = tr_half;
        out[2] = dt(full, hm, hp) + transport(dr);
        out[3] = d_half + tr_half;
    };
    return mc_integrate_multi(n, 4, integrand, cfg.quadrature, initial, stream);
}

std::vector<ResidualPoint> residual_at(const OneParticleDensity& initial, const SeriesConfig& cfg,
                                       const OperatorContext& ctx, const std::vector<MacroPoint>& probes, double t,
                                       double hm, double hp, const ResidualSpec& spec)
{
    std::vector<ResidualPoint> out;
    const auto streamed = std::make_shared<StreamedDensity>(std::make_shared<OneParticleDensity>(initial), t);
    SeriesConfig collision_cfg = cfg;
    collision_cfg.truncation_order = cfg.truncation_order == 0 ? 0 : cfg.truncation_order - 1;
    for (std::size_t p = 0; p < probes.size(); ++p) {
        ResidualPoint rp;
        rp.t = t;
        rp.probe_id = p;
        double lhs = 0.0, lhs_half = 0.0, var = 0.0;
        for (std::size_t n = 0; n <= cfg.truncation_order; ++n) {
            const auto ch = lhs_channels(initial, n, t, hm, hp, spec.dr, ctx, cfg, probes[p],
                                         stream_key(salt_residual, p, n));
            rp.time_derivative += ch[0].value;
            rp.transport += ch[1].value;
            lhs += ch[2].value;
            lhs_half += ch[3].value;
            var += ch[3].std_error * ch[3].std_error;
        }
        double collision_var = 0.0;
        if (cfg.truncation_order > 0) {
            const auto c = collision_integral(probes[p], t, streamed, collision_cfg, ctx, spec.dv, p);
            rp.collision = c.value;
            collision_var = c.std_error * c.std_error;
        }
        rp.residual = lhs_half - rp.collision;
        rp.mc_std_error = std::sqrt(var + collision_var);
        rp.fd_error = std::abs(lhs - lhs_half);
        const double floor = 1e-12 * (std::abs(rp.time_derivative) + std::abs(rp.transport) +
                                      std::abs(rp.collision)) + 1e-300;
        rp.error_bar = spec.mc_sigmas * rp.mc_std_error + rp.fd_error + floor;
        rp.within = std::abs(rp.residual) <= rp.error_bar;
        out.push_back(rp);
    }
    return out;
}

} // namespace

ResidualReport kinetic_residual(const OneParticleDensity& initial, const SeriesConfig& cfg,
                                const OperatorContext& ctx, const std::vector<MacroPoint>& probes,
                                const ResidualSpec& spec)
{
    cfg.validate();
    ctx.validate();
    spec.validate();
    if (cfg.times.size() < 3)
        throw std::invalid_argument("kinetic residual needs at least three time points");
    ResidualReport rep;
    rep.initial_norm = initial.total_mass();
    rep.in_regime = rep.initial_norm < theorem_threshold();
    for (std::size_t i = 1; i + 1 < cfg.times.size(); ++i) {
        const double hm = cfg.times[i] - cfg.times[i - 1];
        const double hp = cfg.times[i + 1] - cfg.times[i];
        if (!(hm > 0.0) || !(hp > 0.0))
            throw std::invalid_argument("kinetic residual needs strictly increasing times");
        auto pts = residual_at(initial, cfg, ctx, probes, cfg.times[i], hm, hp, spec);
        rep.points.insert(rep.points.end(), pts.begin(), pts.end());
    }
    return rep;
}

ResidualSweep residual_step_sweep(const OneParticleDensity& initial, const SeriesConfig& cfg,
                                  const OperatorContext& ctx, const std::vector<MacroPoint>& probes, double t0,
                                  double initial_step, std::size_t levels)
{
    cfg.validate();
    ctx.validate();
    if (levels < 2)
        throw std::invalid_argument("a step sweep needs at least two levels");
    if (!(initial_step > 0.0))
        throw std::invalid_argument("sweep step must be positive");
    ResidualSweep sw;
    double h = initial_step;
    for (std::size_t l = 0; l < levels; ++l, h /= 2) {
        ResidualSpec spec;
        spec.dr = h;
        const auto pts = residual_at(initial, cfg, ctx, probes, t0, h, h, spec);
        double agg = 0.0;
        for (const auto& p : pts)
            agg += std::abs(p.residual);
        sw.steps.push_back(h);
        sw.aggregate.push_back(agg);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        const double x = std::log(sw.steps[l]);
        const double y = std::log(sw.aggregate[l]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    sw.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return sw;
}

} // namespace clusterflow
