#include <clusterflow_tools/commands.hpp>

#include <clusterflow/parallel.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace clusterflow::tools;

int main(int argc, char** argv)
{
    CLI::App app{"Cumulant-series solver, kinetic residual and ensemble oracle for cluster dynamics"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::size_t workers = 1;
    bool no_timestamp = false;
    app.add_option("--config", config_path, "JSON run configuration (defaults when omitted)");
    app.add_option("--seed", seed, "Override the quadrature seed");
    app.add_option("--out", out_dir, "Output directory (overrides output.directory)");
    app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--no-timestamp", no_timestamp, "Omit the generation timestamp from artifacts");
    app.fallthrough();

    const std::vector<std::pair<std::string, std::string>> help{
        {"identities", "Run the operator identity suite"},
        {"solve", "Truncated cumulant series at the probes"},
        {"functional", "Marginal functional of arity >= 2"},
        {"oracle", "Ensemble molecular-dynamics reference densities"},
        {"compare", "Discrepancy between reports, or series versus oracle"},
        {"residual", "Kinetic-equation residual and step-halving sweep"},
        {"print-config", "Print the resolved configuration with all defaults"}};
    for (const auto& [name, text] : help)
        app.add_subcommand(name, text);

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_pass : exit_config_error;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    CommandContext ctx;
    try {
        ctx.config = config_path.empty() ? parse_run_config("{}") : load_run_config(config_path);
        if (seed)
            override_seed(ctx.config, *seed);
        if (!out_dir.empty())
            ctx.config.output.directory = out_dir;
        validate_run_config(ctx.config);
    }
    catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config_error;
    }
    ctx.timestamp = !no_timestamp;
    ctx.log = &std::cout;
    clusterflow::set_worker_count(workers);
    return run_command(command, ctx, std::cerr);
}
