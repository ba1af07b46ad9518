#pragma once

// Brute-force reference: Poisson-number ensembles drawn from a one-particle
// density, evolved by molecular dynamics, and averaged into kernel-smoothed
// k-ary phase densities.

#include <clusterflow/density_fields.hpp>
#include <clusterflow/flow_operators.hpp>
#include <clusterflow/hierarchy_solver.hpp>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace clusterflow {

struct EnsembleConfig
{
    /// Mean particle number per realization.
    double intensity = 1.0;
    std::size_t n_cap = 64;
    std::size_t replicates = 10'000;
    std::uint64_t seed = 2024;
    double bandwidth = 0.2;
    /// Subtract the same realizations moved by free streaming and add back the
    /// closed-form expectation of that free ensemble. Unbiased, and far less
    /// noisy when interactions only perturb the free motion.
    bool control_variate = false;

    /// Requires intensity > 0, intensity <= n_cap / 3, replicates >= 100, bandwidth > 0.
    void validate() const;
};

struct EnsembleState
{
    double time = 0.0;
    std::vector<std::vector<MacroPoint>> realizations;

    std::size_t count(std::size_t i) const { return realizations.at(i).size(); }
    double mean_count() const;
    double count_variance() const;
};

/// Each realization draws N ~ Poisson(intensity) conditioned on N <= n_cap and
/// then N i.i.d. points from the normalized density. Realization i uses its
/// own stream derived from (seed, i).
EnsembleState sample_ensemble(const OneParticleDensity& f1, const EnsembleConfig& cfg);

/// Flows every realization jointly for time t (signed).
EnsembleState evolve_ensemble(const EnsembleState& state, double t, const OperatorContext& ctx);

struct EmpiricalCell
{
    double t = 0.0;
    std::size_t probe_id = 0;
    double value = 0.0;
    double std_error = 0.0;
};

struct EmpiricalDensity
{
    std::size_t arity = 1;
    double bandwidth = 0.0;
    std::string potential;
    std::size_t replicates = 0;
    /// No realization holds k particles, so every value is an empty sum.
    bool sparse = false;
    bool control_variate = false;
    std::vector<double> times;
    std::vector<ProbeConfiguration> probes;
    std::vector<EmpiricalCell> cells; ///< ordered by time, then probe

    const EmpiricalCell& cell(std::size_t time_index, std::size_t probe) const;

    /// Same columns as a series trace; order is reported as -1.
    void write_csv(std::ostream& out) const;
    std::string to_json(const std::string& config_json = {}) const;
    static EmpiricalDensity from_json(const std::string& text);
};

/// Replicate average of sum over ordered distinct k-tuples of
/// prod_l K_h(probe_l - x_{i_l}), with replicate standard errors.
EmpiricalDensity empirical_phase_density(const EnsembleState& state, std::size_t k,
                                         const std::vector<ProbeConfiguration>& probes, double bandwidth);

/// Samples once, evolves to every requested time, and stacks the densities.
EmpiricalDensity run_oracle(const OneParticleDensity& f1, const EnsembleConfig& cfg, const OperatorContext& ctx,
                            const std::vector<double>& times, std::size_t k,
                            const std::vector<ProbeConfiguration>& probes);

struct ProbeDiscrepancy
{
    double t = 0.0;
    std::size_t probe_id = 0;
    std::size_t order = 0;
    double reference = 0.0;
    double candidate = 0.0;
    double delta = 0.0;
    double std_error = 0.0;
};

struct OrderDiscrepancy
{
    double t = 0.0;
    std::size_t order = 0;
    /// sum over probes of |delta|
    double aggregate = 0.0;
    /// sum over probes of the combined standard errors
    double error_bar = 0.0;
};

struct DiscrepancyReport
{
    std::vector<ProbeDiscrepancy> probes;
    /// One entry per (time, order).
    std::vector<OrderDiscrepancy> per_time;
    /// Sums over all times, one entry per order.
    std::vector<OrderDiscrepancy> overall;
    /// Aggregate non-increasing in the order at every time.
    bool monotone = false;

    /// Highest-order aggregate within `sigmas` error bars of zero at every time.
    bool final_order_within(double sigmas) const;
    void write_csv(std::ostream& out) const;
    std::string to_json(const std::string& config_json = {}) const;
};

/// Oracle versus every truncation order of a mollified series trace. Throws
/// ConfigMismatchError unless arity, bandwidth, probes, potential and times match.
DiscrepancyReport compare_to_series(const EmpiricalDensity& oracle, const SolutionTrace& series);

/// Two series traces order by order (cumulative values). Same matching rules,
/// plus equal truncation order and observation mode.
DiscrepancyReport compare_traces(const SolutionTrace& a, const SolutionTrace& b);

} // namespace clusterflow
