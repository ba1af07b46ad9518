#pragma once

// Run configuration for the command-line harness: a JSON document with a fixed
// schema. Every block is optional; absent keys take the defaults printed by
// `print-config`, and keys outside the schema are rejected.

#include <clusterflow/density_fields.hpp>
#include <clusterflow/ensemble_oracle.hpp>
#include <clusterflow/flow_operators.hpp>
#include <clusterflow/hierarchy_solver.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace clusterflow::tools {

/// Malformed or invalid configuration. `what()` names the key path and, when
/// it can be located in the source text, the line.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct IdentityOptions
{
    /// Bound for identities that hold exactly up to rounding.
    double tolerance = 1e-12;
    /// Bound for the general versus explicit second-order scattering form.
    double match_tolerance = 1e-10;
    /// Bound for the small-time generator limits.
    double generator_tolerance = 1e-3;
    /// Width of the acceptance band for Monte Carlo identities.
    double mc_sigmas = 3.0;
    /// Number of random test functions and configurations per identity.
    std::size_t cases = 10;
    /// Time at which the flow identities are evaluated.
    double t = 0.1;
};

struct FunctionalOptions
{
    std::size_t arity = 2;
    double t = 0.1;
};

struct ResidualOptions
{
    ResidualSpec spec;
    /// Step-halving sweep: 0 levels disables it.
    std::size_t sweep_levels = 4;
    double sweep_t0 = 0.1;
    double sweep_step = 0.04;
    /// Accepted band for the fitted order of the free-potential sweep.
    double slope_min = 1.8;
    double slope_max = 2.2;
};

struct CompareOptions
{
    /// Paths of two JSON reports. When both are empty, `compare` runs the
    /// mollified series and the oracle from this config and compares them.
    std::string reference;
    std::string candidate;
    double mc_sigmas = 3.0;
};

struct OutputOptions
{
    std::string directory = ".";
    bool csv = true;
    bool json = true;
};

struct RunConfig
{
    OperatorContext context;
    InitialDataSpec initial;
    SeriesConfig series;
    /// User probe configurations; empty means the default set scaled by the
    /// initial temperature and width.
    std::vector<ProbeConfiguration> probes;
    EnsembleConfig ensemble;
    /// Intensity follows the initial mass unless set explicitly.
    bool intensity_auto = true;
    IdentityOptions identities;
    FunctionalOptions functional;
    ResidualOptions residual;
    CompareOptions compare;
    OutputOptions output;

    /// Probe configurations of arity `k`: the user list when given, else defaults.
    std::vector<ProbeConfiguration> probe_configurations(std::size_t k) const;
    std::vector<MacroPoint> probe_points() const;

    /// Resolved Poisson intensity for the oracle.
    double intensity() const;
    /// Oracle seed derived from the quadrature seed.
    std::uint64_t ensemble_seed() const;
    EnsembleConfig resolved_ensemble() const;

    /// Canonical JSON of every field, defaults included.
    std::string to_json(int indent = 2) const;
};

/// Parses the JSON text over the defaults. Throws ConfigError on syntax errors,
/// unknown keys, wrong types, or values rejected by the module validators.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Applies --seed by replacing the quadrature seed.
void override_seed(RunConfig& cfg, std::uint64_t seed);

/// Runs every module validator on the resolved config.
void validate_run_config(const RunConfig& cfg);

} // namespace clusterflow::tools
