#include <clusterflow_tools/commands.hpp>

#include <clusterflow/errors.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace clusterflow::tools {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ostream& log_of(const CommandContext& ctx)
{
    return ctx.log ? *ctx.log : std::cout;
}

std::string utc_now()
{
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fmt(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string short_fmt(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

/// Writes artifacts under the configured output directory with provenance.
class ArtifactWriter
{
public:
    explicit ArtifactWriter(const CommandContext& ctx) : ctx_(ctx), dir_(ctx.config.output.directory)
    {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec)
            throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
    }

    void csv(const std::string& name, const std::string& body) const
    {
        if (!ctx_.config.output.csv)
            return;
        std::ostringstream s;
        s << "# config: " << provenance().dump() << '\n';
        if (ctx_.timestamp)
            s << "# generated: " << utc_now() << '\n';
        s << body;
        write(name + ".csv", s.str());
    }

    /// `document` is a JSON text; the resolved config replaces any "config" key.
    void json_doc(const std::string& name, const std::string& document) const
    {
        if (!ctx_.config.output.json)
            return;
        json j = json::parse(document);
        j["config"] = provenance();
        if (ctx_.timestamp)
            j["generated"] = utc_now();
        write(name + ".json", j.dump(2) + "\n");
    }

private:
    /// The resolved config without the output directory, so that artifacts
    /// do not depend on where they were written.
    json provenance() const
    {
        json j = json::parse(ctx_.config.to_json(-1));
        j["output"].erase("directory");
        return j;
    }

    void write(const std::string& file, const std::string& content) const
    {
        const fs::path path = dir_ / file;
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot write '" + path.string() + "'");
        out << content;
        log_of(ctx_) << "wrote " << path.string() << '\n';
    }

    const CommandContext& ctx_;
    fs::path dir_;
};

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot read '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void print_convergence(std::ostream& os, const ConvergenceReport& c, const std::vector<MCEstimate>& norms)
{
    os << "initial_norm " << short_fmt(c.initial_norm) << "  theorem_threshold " << short_fmt(c.theorem_threshold)
       << "  in_regime " << (c.in_regime ? "true" : "false") << '\n';
    if (!c.in_regime)
        os << "WARNING: initial norm is not below the global-existence threshold; the series is reported "
              "outside its proven regime\n";
    os << "order  term_norm     std_error     bound         decay\n";
    for (std::size_t n = 0; n < norms.size(); ++n) {
        char line[160];
        const double bound = n < c.term_bounds.size() ? c.term_bounds[n] : NAN;
        const double decay = n > 0 && norms[n - 1].value != 0.0 ? norms[n].value / norms[n - 1].value : NAN;
        std::snprintf(line, sizeof line, "%-6zu %-13.6g %-13.6g %-13.6g %s\n", n, norms[n].value,
                      norms[n].std_error, bound, std::isnan(decay) ? "-" : short_fmt(decay).c_str());
        os << line;
    }
}

bool is_free(const PotentialSpec& p)
{
    return !p.interacting();
}

} // namespace

int cmd_print_config(const CommandContext& ctx)
{
    log_of(ctx) << ctx.config.to_json(2) << '\n';
    return exit_pass;
}

int cmd_identities(const CommandContext& ctx)
{
    auto& os = log_of(ctx);
    const auto records = run_identity_suite(ctx.config);
    json arr = json::array();
    bool ok = true;
    for (const auto& r : records) {
        ok = ok && r.pass;
        char line[200];
        std::snprintf(line, sizeof line, "%s %-26s error %-12.4g bound %-12.4g %s\n", r.pass ? "PASS" : "FAIL",
                      r.name.c_str(), r.value, r.bound, r.detail.c_str());
        os << line;
        json rj{{"name", r.name}, {"error", r.value}, {"bound", r.bound}, {"pass", r.pass}};
        if (!r.detail.empty())
            rj["detail"] = r.detail;
        arr.push_back(rj);
    }
    ArtifactWriter w(ctx);
    json doc{{"kind", "identities"}, {"records", arr}, {"all_pass", ok}};
    w.json_doc("identities", doc.dump());
    std::ostringstream csv;
    csv << "name,error,bound,pass\n";
    for (const auto& r : records)
        csv << r.name << ',' << fmt(r.value) << ',' << fmt(r.bound) << ',' << (r.pass ? 1 : 0) << '\n';
    w.csv("identities", csv.str());
    if (!ok) {
        os << "failing identities:";
        for (const auto& r : records)
            if (!r.pass)
                os << ' ' << r.name;
        os << '\n';
    }
    return ok ? exit_pass : exit_check_failure;
}

int cmd_solve(const CommandContext& ctx)
{
    const auto& cfg = ctx.config;
    const auto initial = maxwellian_gaussian(cfg.initial);
    const auto trace =
        solve_series_gk(initial, cfg.series.arity, cfg.series, cfg.context, cfg.probe_configurations(cfg.series.arity));
    print_convergence(log_of(ctx), trace.convergence, trace.convergence.term_norms);
    ArtifactWriter w(ctx);
    std::ostringstream csv;
    trace.write_csv(csv);
    w.csv("trace", csv.str());
    w.json_doc("trace", trace.to_json());
    return exit_pass;
}

int cmd_functional(const CommandContext& ctx)
{
    const auto& cfg = ctx.config;
    const std::size_t k = cfg.functional.arity;
    if (k < 2)
        throw ConfigError("key 'functional.arity': marginal functionals need arity >= 2");
    const auto initial = std::make_shared<OneParticleDensity>(maxwellian_gaussian(cfg.initial));
    const auto g1_t = std::make_shared<StreamedDensity>(initial, cfg.functional.t);
    const auto res = marginal_functional(k, cfg.functional.t, g1_t, cfg.series, cfg.context,
                                         cfg.probe_configurations(k));
    auto& os = log_of(ctx);
    os << "g1_norm " << short_fmt(res.g1_norm) << "  threshold " << short_fmt(res.threshold) << "  in_regime "
       << (res.in_regime ? "true" : "false") << '\n';
    if (!res.warning.empty())
        os << "WARNING: " << res.warning << '\n';

    std::ostringstream csv;
    csv << "t,probe_id,order,value,std_error,cumulative\n";
    json values = json::array();
    for (const auto& v : res.values) {
        double cum = 0.0;
        json terms = json::array();
        for (std::size_t n = 0; n < v.terms.size(); ++n) {
            cum += v.terms[n].value;
            csv << fmt(res.t) << ',' << v.probe_id << ',' << n << ',' << fmt(v.terms[n].value) << ','
                << fmt(v.terms[n].std_error) << ',' << fmt(cum) << '\n';
            terms.push_back({{"value", v.terms[n].value}, {"std_error", v.terms[n].std_error}});
        }
        values.push_back({{"probe_id", v.probe_id},
                          {"terms", terms},
                          {"cumulative", v.cumulative},
                          {"cumulative_std_error", v.cumulative_std_error}});
    }
    json doc{{"kind", "functional"},   {"arity", res.arity},         {"t", res.t},
             {"renormalized", res.renormalized}, {"g1_norm", res.g1_norm}, {"threshold", res.threshold},
             {"in_regime", res.in_regime}, {"warning", res.warning},   {"values", values}};
    ArtifactWriter w(ctx);
    w.csv("functional", csv.str());
    w.json_doc("functional", doc.dump());
    return exit_pass;
}

int cmd_oracle(const CommandContext& ctx)
{
    const auto& cfg = ctx.config;
    const auto initial = maxwellian_gaussian(cfg.initial);
    const auto ens = cfg.resolved_ensemble();
    const auto d = run_oracle(initial, ens, cfg.context, cfg.series.times, cfg.series.arity,
                              cfg.probe_configurations(cfg.series.arity));
    auto& os = log_of(ctx);
    os << "replicates " << d.replicates << "  intensity " << short_fmt(ens.intensity) << "  control_variate "
       << (d.control_variate ? "true" : "false") << '\n';
    if (d.sparse)
        os << "WARNING: no realization holds " << d.arity << " particles; every value is an empty sum\n";
    ArtifactWriter w(ctx);
    std::ostringstream csv;
    d.write_csv(csv);
    w.csv("oracle", csv.str());
    w.json_doc("oracle", d.to_json());
    return exit_pass;
}

int cmd_compare(const CommandContext& ctx)
{
    const auto& cfg = ctx.config;
    auto& os = log_of(ctx);
    DiscrepancyReport rep;
    bool need_monotone = false;
    if (cfg.compare.reference.empty() && cfg.compare.candidate.empty()) {
        const auto initial = maxwellian_gaussian(cfg.initial);
        SeriesConfig sc = cfg.series;
        sc.observation = Observation::mollified;
        EnsembleConfig ens = cfg.resolved_ensemble();
        sc.observation_bandwidth = ens.bandwidth;
        const auto probes = cfg.probe_configurations(sc.arity);
        const auto series = solve_series_gk(initial, sc.arity, sc, cfg.context, probes);
        const auto oracle = run_oracle(initial, ens, cfg.context, sc.times, sc.arity, probes);
        rep = compare_to_series(oracle, series);
        need_monotone = true;
    }
    else {
        if (cfg.compare.reference.empty() || cfg.compare.candidate.empty())
            throw ConfigError("key 'compare': give both reference and candidate, or neither");
        const std::string a = read_file(cfg.compare.reference);
        const std::string b = read_file(cfg.compare.candidate);
        auto kind_of = [](const std::string& text, const std::string& path) {
            try {
                return json::parse(text).value("kind", std::string{});
            }
            catch (const json::exception& e) {
                throw ConfigError("'" + path + "' is not a JSON report: " + e.what());
            }
        };
        const std::string ka = kind_of(a, cfg.compare.reference);
        const std::string kb = kind_of(b, cfg.compare.candidate);
        if (ka == "oracle" && kb == "series") {
            rep = compare_to_series(EmpiricalDensity::from_json(a), SolutionTrace::from_json(b));
            need_monotone = true;
        }
        else if (ka == "series" && kb == "oracle") {
            rep = compare_to_series(EmpiricalDensity::from_json(b), SolutionTrace::from_json(a));
            need_monotone = true;
        }
        else if (ka == "series" && kb == "series") {
            rep = compare_traces(SolutionTrace::from_json(a), SolutionTrace::from_json(b));
        }
        else {
            throw ConfigError("compare needs two series traces or an oracle and a series trace (got '" + ka +
                              "' and '" + kb + "')");
        }
    }
    os << "t        order  aggregate     error_bar\n";
    for (const auto& r : rep.per_time) {
        char line[120];
        std::snprintf(line, sizeof line, "%-8.4g %-6zu %-13.6g %-13.6g\n", r.t, r.order, r.aggregate, r.error_bar);
        os << line;
    }
    const bool within = rep.final_order_within(cfg.compare.mc_sigmas);
    os << "monotone " << (rep.monotone ? "true" : "false") << "  final_order_within " << (within ? "true" : "false")
       << '\n';
    ArtifactWriter w(ctx);
    std::ostringstream csv;
    rep.write_csv(csv);
    w.csv("discrepancy", csv.str());
    w.json_doc("discrepancy", rep.to_json());
    const bool ok = within && (!need_monotone || rep.monotone);
    return ok ? exit_pass : exit_check_failure;
}

int cmd_residual(const CommandContext& ctx)
{
    const auto& cfg = ctx.config;
    if (cfg.series.arity != 1)
        throw ConfigError("key 'series.arity': the kinetic residual is defined for the one-particle series");
    SeriesConfig sc = cfg.series;
    sc.observation = Observation::pointwise;
    const auto initial = maxwellian_gaussian(cfg.initial);
    const auto probes = cfg.probe_points();
    auto& os = log_of(ctx);

    const auto rep = kinetic_residual(initial, sc, cfg.context, probes, cfg.residual.spec);
    if (!rep.in_regime)
        os << "WARNING: initial norm " << short_fmt(rep.initial_norm)
           << " is not below the global-existence threshold\n";
    std::ostringstream csv;
    csv << "t,probe_id,time_derivative,transport,collision,residual,mc_std_error,fd_error,error_bar,within\n";
    json points = json::array();
    for (const auto& p : rep.points) {
        csv << fmt(p.t) << ',' << p.probe_id << ',' << fmt(p.time_derivative) << ',' << fmt(p.transport) << ','
            << fmt(p.collision) << ',' << fmt(p.residual) << ',' << fmt(p.mc_std_error) << ',' << fmt(p.fd_error)
            << ',' << fmt(p.error_bar) << ',' << (p.within ? 1 : 0) << '\n';
        points.push_back({{"t", p.t},
                          {"probe_id", p.probe_id},
                          {"time_derivative", p.time_derivative},
                          {"transport", p.transport},
                          {"collision", p.collision},
                          {"residual", p.residual},
                          {"mc_std_error", p.mc_std_error},
                          {"fd_error", p.fd_error},
                          {"error_bar", p.error_bar},
                          {"within", p.within}});
    }
    bool ok = rep.all_within();
    os << "residual points within error bars: " << (ok ? "all" : "NOT all") << " (" << rep.points.size() << ")\n";

    json doc{{"kind", "residual"}, {"in_regime", rep.in_regime}, {"initial_norm", rep.initial_norm},
             {"points", points},   {"all_within", ok}};
    ArtifactWriter w(ctx);
    if (cfg.residual.sweep_levels >= 2) {
        const auto sw = residual_step_sweep(initial, sc, cfg.context, probes, cfg.residual.sweep_t0,
                                            cfg.residual.sweep_step, cfg.residual.sweep_levels);
        os << "step         aggregate\n";
        std::ostringstream scsv;
        scsv << "step,aggregate\n";
        for (std::size_t l = 0; l < sw.steps.size(); ++l) {
            char line[80];
            std::snprintf(line, sizeof line, "%-12.6g %-12.6g\n", sw.steps[l], sw.aggregate[l]);
            os << line;
            scsv << fmt(sw.steps[l]) << ',' << fmt(sw.aggregate[l]) << '\n';
        }
        const bool checked = is_free(cfg.context.potential);
        const bool slope_ok = sw.slope >= cfg.residual.slope_min && sw.slope <= cfg.residual.slope_max;
        os << "sweep slope " << short_fmt(sw.slope);
        if (checked)
            os << (slope_ok ? " (within " : " (OUTSIDE ") << short_fmt(cfg.residual.slope_min) << ".."
               << short_fmt(cfg.residual.slope_max) << ")";
        os << '\n';
        if (checked)
            ok = ok && slope_ok;
        doc["sweep"] = {{"steps", sw.steps}, {"aggregate", sw.aggregate}, {"slope", sw.slope}, {"checked", checked}};
        w.csv("residual_sweep", scsv.str());
    }
    w.csv("residual", csv.str());
    w.json_doc("residual", doc.dump());
    return ok ? exit_pass : exit_check_failure;
}

const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names{"identities", "solve",    "functional",  "oracle",
                                                "compare",    "residual", "print-config"};
    return names;
}

int run_command(const std::string& name, const CommandContext& ctx, std::ostream& err)
{
    try {
        if (name == "identities")
            return cmd_identities(ctx);
        if (name == "solve")
            return cmd_solve(ctx);
        if (name == "functional")
            return cmd_functional(ctx);
        if (name == "oracle")
            return cmd_oracle(ctx);
        if (name == "compare")
            return cmd_compare(ctx);
        if (name == "residual")
            return cmd_residual(ctx);
        if (name == "print-config")
            return cmd_print_config(ctx);
        err << "error: unknown subcommand '" << name << "'\n";
        return exit_config_error;
    }
    catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config_error;
    }
    catch (const ConfigMismatchError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config_error;
    }
    catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config_error;
    }
    catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return exit_runtime_error;
    }
}

} // namespace clusterflow::tools
