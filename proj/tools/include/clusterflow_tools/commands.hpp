#pragma once

#include <clusterflow_tools/run_config.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace clusterflow::tools {

enum ExitCode : int
{
    exit_pass = 0,
    exit_check_failure = 1,
    exit_config_error = 2,
    exit_runtime_error = 3
};

struct IdentityRecord
{
    std::string name;
    /// Observed error (absolute deviation from the identity).
    double value = 0.0;
    /// Largest accepted error.
    double bound = 0.0;
    bool pass = false;
    /// Integer identities report their exact value here.
    std::string detail;
};

/// Partition sums, t = 0 cumulant degeneracy, free-flow collapse of the
/// scattering and V operators, general versus explicit second-order V, the
/// generator limits, isometry of S(-t), and the integrated cancellation of
/// second-order cumulants.
std::vector<IdentityRecord> run_identity_suite(const RunConfig& cfg);

struct CommandContext
{
    RunConfig config;
    /// Header comment with the wall-clock time in every artifact.
    bool timestamp = true;
    /// Human-readable progress and summaries.
    std::ostream* log = nullptr;
};

int cmd_identities(const CommandContext& ctx);
int cmd_solve(const CommandContext& ctx);
int cmd_functional(const CommandContext& ctx);
int cmd_oracle(const CommandContext& ctx);
int cmd_compare(const CommandContext& ctx);
int cmd_residual(const CommandContext& ctx);
int cmd_print_config(const CommandContext& ctx);

/// Dispatches by subcommand name; translates exceptions into exit codes and
/// reports them on `err`.
int run_command(const std::string& name, const CommandContext& ctx, std::ostream& err);

/// Names accepted by run_command.
const std::vector<std::string>& command_names();

} // namespace clusterflow::tools
