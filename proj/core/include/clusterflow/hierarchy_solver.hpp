#pragma once

// Truncated cumulant-series solutions for the averaged one-particle and k-ary
// phase densities, the marginal functionals built from scattering cumulants,
// the collision integral of the kinetic equation, its residual, and the
// smallness bookkeeping of the global existence regime.

#include <clusterflow/cluster_cumulants.hpp>
#include <clusterflow/density_fields.hpp>
#include <clusterflow/flow_operators.hpp>

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace clusterflow {

/// One probe configuration: k macroscopic points for an arity-k quantity.
using ProbeConfiguration = std::vector<MacroPoint>;

/// Eight one-particle probes in units of the initial thermal speed and spatial
/// width: the origin, half-width offsets in v and r, mixed unit offsets, and
/// the two-sigma tails in v and in r.
std::vector<MacroPoint> default_probes(double temperature = 1.0, double spatial_width = 1.0);

/// Arity-k probes built from the one-particle set by cyclic shifts:
/// configuration j is (p_j, p_{j+1}, ..., p_{j+k-1}) with indices mod 8.
std::vector<ProbeConfiguration> default_probe_configurations(std::size_t k, double temperature = 1.0,
                                                             double spatial_width = 1.0);

enum class Observation
{
    /// Series value at the probe itself.
    pointwise,
    /// Series density smoothed by the Gaussian kernel of width
    /// `observation_bandwidth` in every argument, the quantity an ensemble
    /// estimate with that kernel converges to.
    mollified
};

std::string to_string(Observation o);
Observation observation_from_string(const std::string& s);

struct SeriesConfig
{
    std::size_t truncation_order = 2;
    std::vector<double> times{0.0};
    QuadratureSpec quadrature;
    bool renormalized = false;
    std::size_t arity = 1;
    Observation observation = Observation::pointwise;
    double observation_bandwidth = 0.2;

    void validate() const;
};

struct ConvergenceReport
{
    std::size_t arity = 1;
    double initial_norm = 0.0;
    /// e^{-10} / (1 + e^{-9}).
    double theorem_threshold = 0.0;
    /// e^{-(3k+2)}.
    double functional_threshold_k = 0.0;
    bool in_regime = false;
    bool functional_in_regime = false;
    /// Geometric majorant of the k-ary functional norm (infinite outside its
    /// radius of convergence), with the current norm taken as the initial one.
    double functional_majorant = 0.0;
    /// Majorant of the one-particle solution norm, same convention.
    double solution_majorant = 0.0;
    /// Per-order bound e^{n+2} a^{k+n} for the 1/n!-weighted cumulant terms.
    std::vector<double> term_bounds;
    /// Sampled (1/n!) int |A_{1+n}(-t) prod g| per order (filled by the solver).
    std::vector<MCEstimate> term_norms;
};

/// Pure constants and majorants; term_norms is left empty.
ConvergenceReport convergence_report(const OneParticleDensity& initial, std::size_t k,
                                     std::size_t orders = max_expansion_order);
double theorem_threshold();
double functional_threshold(std::size_t k);

struct TraceCell
{
    double t = 0.0;
    std::size_t probe_id = 0;
    std::size_t order = 0;
    double value = 0.0;
    double std_error = 0.0;
    double cumulative = 0.0;
    double cumulative_std_error = 0.0;
};

struct SolutionTrace
{
    std::size_t arity = 1;
    std::size_t truncation_order = 0;
    bool renormalized = false;
    Observation observation = Observation::pointwise;
    double bandwidth = 0.0;      ///< observation kernel width (mollified mode)
    std::string potential;       ///< "kind amplitude range"
    std::vector<double> times;
    std::vector<ProbeConfiguration> probes;
    std::vector<TraceCell> cells; ///< ordered by time, then probe, then order
    /// term_norms[time][order]
    std::vector<std::vector<MCEstimate>> term_norms;
    ConvergenceReport convergence;

    const TraceCell& cell(std::size_t time_index, std::size_t probe, std::size_t order) const;

    /// Rows "t,probe_id,order,value,std_error,cumulative" without header comments.
    void write_csv(std::ostream& out) const;
    /// JSON document; `config_json` (already serialized) is embedded verbatim
    /// under "config" when nonempty.
    std::string to_json(const std::string& config_json = {}) const;
    static SolutionTrace from_json(const std::string& text);
};

std::string describe_potential(const PotentialSpec& p);

/// <G^(1)>(t) = sum_{n<=N} (1/n!) int A_{1+n}(-t) prod g0 at the probes.
SolutionTrace solve_series_g1(const OneParticleDensity& initial, const SeriesConfig& cfg, const OperatorContext& ctx,
                              const std::vector<MacroPoint>& probes);

/// Arity-k version with product initial data built from `initial`.
SolutionTrace solve_series_gk(const OneParticleDensity& initial, std::size_t k, const SeriesConfig& cfg,
                              const OperatorContext& ctx, const std::vector<ProbeConfiguration>& probes);

/// Single series cell with an explicit RNG stream key, for callers that need
/// common random numbers across related cells.
MCEstimate series_term(const OneParticleDensity& initial, std::size_t k, std::size_t n, double t,
                       const OperatorContext& ctx, const SeriesConfig& cfg, const ProbeConfiguration& probe,
                       std::uint64_t stream);

struct FunctionalValue
{
    std::size_t probe_id = 0;
    std::vector<MCEstimate> terms;
    double cumulative = 0.0;
    double cumulative_std_error = 0.0;
};

struct FunctionalResult
{
    std::size_t arity = 2;
    double t = 0.0;
    bool renormalized = false;
    double g1_norm = 0.0;
    double threshold = 0.0;
    bool in_regime = false;
    std::string warning;
    std::vector<FunctionalValue> values;
};

/// <G^(k)>(t | g1_t) = sum_{n<=N} (1/n!) int V_{1+n}(t) prod g1_t at probes
/// (renormalized operators when cfg.renormalized).
FunctionalResult marginal_functional(std::size_t k, double t, std::shared_ptr<const SampleableDensity> g1_t,
                                     const SeriesConfig& cfg, const OperatorContext& ctx,
                                     const std::vector<ProbeConfiguration>& probes);

struct CollisionEstimate
{
    double value = 0.0;
    double std_error = 0.0;
    std::vector<MCEstimate> terms; ///< per functional order
};

/// int dxi_2 <grad Phi(r_1 - r_2), d/dv_1> <G^(2)>(t, xi_1, xi_2 | g1_t), with
/// the velocity derivative taken by central differences of step dv on common
/// samples. Orders 0..cfg.truncation_order of the functional are included.
CollisionEstimate collision_integral(const MacroPoint& xi1, double t, std::shared_ptr<const SampleableDensity> g1_t,
                                     const SeriesConfig& cfg, const OperatorContext& ctx, double dv = 1e-3,
                                     std::uint64_t stream = 0);

struct ResidualSpec
{
    /// Half-width of the central difference in r.
    double dr = 1e-2;
    /// Velocity step inside the collision integral.
    double dv = 1e-3;
    /// Number of standard errors in the Monte Carlo part of the error bar.
    double mc_sigmas = 3.0;

    void validate() const;
};

struct ResidualPoint
{
    double t = 0.0;
    std::size_t probe_id = 0;
    double time_derivative = 0.0;
    double transport = 0.0;
    double collision = 0.0;
    /// Evaluated with the halved difference steps.
    double residual = 0.0;
    double mc_std_error = 0.0;
    /// |full-step minus half-step residual|, about three times the leading
    /// truncation error of the half-step value.
    double fd_error = 0.0;
    double error_bar = 0.0;
    bool within = false;
};

struct ResidualReport
{
    bool in_regime = false;
    double initial_norm = 0.0;
    std::vector<ResidualPoint> points;

    bool all_within() const;
};

/// Residual of the kinetic equation for the truncated series solution at every
/// interior time of cfg.times (three-point differences on the grid) and every
/// probe. The collision integral uses the functional with g1 replaced by the
/// freely streamed initial density, which is exact at t = 0.
ResidualReport kinetic_residual(const OneParticleDensity& initial, const SeriesConfig& cfg,
                                const OperatorContext& ctx, const std::vector<MacroPoint>& probes,
                                const ResidualSpec& spec);

struct ResidualSweep
{
    std::vector<double> steps;      ///< common time and space difference step
    std::vector<double> aggregate;  ///< sum over probes of |residual|
    double slope = 0.0;             ///< least-squares slope of log aggregate vs log step
};

/// Halves the difference steps `levels - 1` times around time t0 and measures
/// the order of the residual. Meant for the free potential, where the exact
/// residual vanishes and only difference truncation remains.
ResidualSweep residual_step_sweep(const OneParticleDensity& initial, const SeriesConfig& cfg,
                                  const OperatorContext& ctx, const std::vector<MacroPoint>& probes, double t0,
                                  double initial_step, std::size_t levels = 4);

} // namespace clusterflow
