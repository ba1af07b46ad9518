#include <clusterflow_tools/run_config.hpp>

#include <clusterflow/errors.hpp>
#include <clusterflow/random.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace clusterflow::tools {

using nlohmann::json;

namespace {

/// 1-based line of the first occurrence of `"key"` in the text, or 0.
std::size_t locate_key(const std::string& text, const std::string& key)
{
    const auto pos = text.find('"' + key + '"');
    if (pos == std::string::npos)
        return 0;
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

std::string where(const std::string& text, const std::string& path, const std::string& key)
{
    const std::size_t line = locate_key(text, key);
    std::string s = "key '" + path + "'";
    if (line > 0)
        s += " (line " + std::to_string(line) + ")";
    return s;
}

/// Reads one JSON object against an explicit list of keys.
class Block
{
public:
    Block(const json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text)
    {
        if (!j_.is_object())
            throw ConfigError(where(text_, path_, leaf(path_)) + ": expected an object");
    }

    template <class T>
    void read(const std::string& key, T& target)
    {
        allowed_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end())
            return;
        try {
            target = it->template get<T>();
        }
        catch (const json::exception& e) {
            throw ConfigError(where(text_, full(key), key) + ": wrong type (" + e.what() + ")");
        }
    }

    const json* child(const std::string& key)
    {
        allowed_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& text() const { return text_; }

    void finish() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (!allowed_.count(key)) {
                std::string known;
                for (const auto& k : allowed_)
                    known += (known.empty() ? "" : ", ") + k;
                throw ConfigError(where(text_, full(key), key) + ": unknown key; expected one of: " + known);
            }
        }
    }

private:
    static std::string leaf(const std::string& path)
    {
        const auto dot = path.rfind('.');
        return dot == std::string::npos ? path : path.substr(dot + 1);
    }

    const json& j_;
    std::string path_;
    const std::string& text_;
    std::set<std::string> allowed_;
};

json point_json(const MacroPoint& p)
{
    return json{{"v", {p.v.x, p.v.y, p.v.z}}, {"r", {p.r.x, p.r.y, p.r.z}}};
}

Vec3 vec_from(const json& j, const std::string& what)
{
    if (!j.is_array() || j.size() != 3)
        throw ConfigError(what + ": expected an array of three numbers");
    try {
        return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    }
    catch (const json::exception&) {
        throw ConfigError(what + ": expected an array of three numbers");
    }
}

MacroPoint point_from(const json& j, const std::string& path, const std::string& text)
{
    Block b(j, path, text);
    const json* v = b.child("v");
    const json* r = b.child("r");
    b.finish();
    MacroPoint p;
    if (v)
        p.v = vec_from(*v, where(text, path + ".v", "v"));
    if (r)
        p.r = vec_from(*r, where(text, path + ".r", "r"));
    return p;
}

std::vector<ProbeConfiguration> probes_from(const json& j, const std::string& text)
{
    if (!j.is_array())
        throw ConfigError(where(text, "series.probes", "probes") + ": expected an array");
    std::vector<ProbeConfiguration> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string path = "series.probes[" + std::to_string(i) + "]";
        ProbeConfiguration c;
        if (j[i].is_array()) {
            for (std::size_t l = 0; l < j[i].size(); ++l)
                c.push_back(point_from(j[i][l], path + "[" + std::to_string(l) + "]", text));
        }
        else {
            c.push_back(point_from(j[i], path, text));
        }
        out.push_back(std::move(c));
    }
    return out;
}

std::string error_mode_name(ErrorMode m)
{
    return m == ErrorMode::standard_error ? "standard_error" : "fixed_budget";
}

template <class Fn>
void validated(const std::string& block, Fn&& fn)
{
    try {
        fn();
    }
    catch (const std::invalid_argument& e) {
        throw ConfigError("invalid " + block + " block: " + e.what());
    }
}

} // namespace

std::vector<ProbeConfiguration> RunConfig::probe_configurations(std::size_t k) const
{
    if (!probes.empty())
        return probes;
    return default_probe_configurations(k, initial.temperature, initial.spatial_width);
}

std::vector<MacroPoint> RunConfig::probe_points() const
{
    std::vector<MacroPoint> out;
    for (const auto& c : probe_configurations(1)) {
        if (c.size() != 1)
            throw ConfigError("key 'series.probes': one-particle commands need single-point probes");
        out.push_back(c.front());
    }
    return out;
}

double RunConfig::intensity() const
{
    return intensity_auto ? initial.mass : ensemble.intensity;
}

std::uint64_t RunConfig::ensemble_seed() const
{
    return derive_seed(series.quadrature.seed, {0x0e});
}

EnsembleConfig RunConfig::resolved_ensemble() const
{
    EnsembleConfig e = ensemble;
    e.intensity = intensity();
    e.seed = ensemble_seed();
    return e;
}

std::string RunConfig::to_json(int indent) const
{
    json probes_j = json::array();
    for (const auto& c : probes) {
        if (c.size() == 1) {
            probes_j.push_back(point_json(c.front()));
        }
        else {
            json cj = json::array();
            for (const auto& p : c)
                cj.push_back(point_json(p));
            probes_j.push_back(cj);
        }
    }
    json j;
    j["potential"] = {{"kind", std::string(to_string(context.potential.kind))},
                      {"amplitude", context.potential.amplitude},
                      {"range", context.potential.range}};
    j["integrator"] = {{"step", context.flow.step}, {"max_steps", context.flow.max_steps}};
    j["initial_data"] = {{"temperature", initial.temperature}, {"spatial_width", initial.spatial_width},
                         {"mass", initial.mass},               {"components", initial.components},
                         {"bandwidth", initial.bandwidth},     {"seed", initial.seed}};
    j["series"] = {{"order", series.truncation_order},
                   {"renormalized", series.renormalized},
                   {"times", series.times},
                   {"arity", series.arity},
                   {"observation", to_string(series.observation)},
                   {"observation_bandwidth", series.observation_bandwidth},
                   {"probes", probes_j}};
    j["quadrature"] = {{"samples", series.quadrature.n_samples},
                       {"seed", series.quadrature.seed},
                       {"error_mode", error_mode_name(series.quadrature.error_mode)},
                       {"target_std_error", series.quadrature.target_std_error},
                       {"max_samples", series.quadrature.max_samples}};
    j["ensemble"] = {{"intensity", intensity_auto ? json("auto") : json(ensemble.intensity)},
                     {"replicates", ensemble.replicates},
                     {"cap", ensemble.n_cap},
                     {"bandwidth", ensemble.bandwidth},
                     {"control_variate", ensemble.control_variate}};
    j["identities"] = {{"tolerance", identities.tolerance},
                       {"match_tolerance", identities.match_tolerance},
                       {"generator_tolerance", identities.generator_tolerance},
                       {"mc_sigmas", identities.mc_sigmas},
                       {"cases", identities.cases},
                       {"t", identities.t}};
    j["functional"] = {{"arity", functional.arity}, {"t", functional.t}};
    j["residual"] = {{"dr", residual.spec.dr},
                     {"dv", residual.spec.dv},
                     {"mc_sigmas", residual.spec.mc_sigmas},
                     {"sweep_levels", residual.sweep_levels},
                     {"sweep_t0", residual.sweep_t0},
                     {"sweep_step", residual.sweep_step},
                     {"slope_min", residual.slope_min},
                     {"slope_max", residual.slope_max}};
    j["compare"] = {{"reference", compare.reference},
                    {"candidate", compare.candidate},
                    {"mc_sigmas", compare.mc_sigmas}};
    json formats = json::array();
    if (output.csv)
        formats.push_back("csv");
    if (output.json)
        formats.push_back("json");
    j["output"] = {{"directory", output.directory}, {"formats", formats}};
    return j.dump(indent);
}

RunConfig parse_run_config(const std::string& text)
{
    json root;
    try {
        root = json::parse(text, nullptr, true, true);
    }
    catch (const json::parse_error& e) {
        const std::size_t byte = std::min(e.byte, text.size());
        const std::size_t line =
            1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
        throw ConfigError("config syntax error at line " + std::to_string(line) + ": " + e.what());
    }

    RunConfig cfg;
    cfg.context.potential = PotentialSpec{PotentialKind::harmonic_pair, 1.0, 1.0};
    cfg.initial.mass = 1e-5;
    cfg.series.times = {0.0, 0.05, 0.1};

    Block top(root, "", text);
    if (const json* p = top.child("potential")) {
        Block b(*p, "potential", text);
        std::string kind(to_string(cfg.context.potential.kind));
        b.read("kind", kind);
        b.read("amplitude", cfg.context.potential.amplitude);
        b.read("range", cfg.context.potential.range);
        b.finish();
        try {
            cfg.context.potential.kind = potential_kind_from_string(kind);
        }
        catch (const std::invalid_argument& e) {
            throw ConfigError(where(text, "potential.kind", "kind") + ": " + e.what());
        }
    }
    if (const json* p = top.child("integrator")) {
        Block b(*p, "integrator", text);
        b.read("step", cfg.context.flow.step);
        b.read("max_steps", cfg.context.flow.max_steps);
        b.finish();
    }
    if (const json* p = top.child("initial_data")) {
        Block b(*p, "initial_data", text);
        b.read("temperature", cfg.initial.temperature);
        b.read("spatial_width", cfg.initial.spatial_width);
        b.read("mass", cfg.initial.mass);
        b.read("components", cfg.initial.components);
        b.read("bandwidth", cfg.initial.bandwidth);
        b.read("seed", cfg.initial.seed);
        b.finish();
    }
    if (const json* p = top.child("series")) {
        Block b(*p, "series", text);
        b.read("order", cfg.series.truncation_order);
        b.read("renormalized", cfg.series.renormalized);
        b.read("times", cfg.series.times);
        b.read("arity", cfg.series.arity);
        std::string obs = to_string(cfg.series.observation);
        b.read("observation", obs);
        b.read("observation_bandwidth", cfg.series.observation_bandwidth);
        if (const json* pr = b.child("probes"))
            cfg.probes = probes_from(*pr, text);
        b.finish();
        try {
            cfg.series.observation = observation_from_string(obs);
        }
        catch (const std::invalid_argument& e) {
            throw ConfigError(where(text, "series.observation", "observation") + ": " + e.what());
        }
    }
    if (const json* p = top.child("quadrature")) {
        Block b(*p, "quadrature", text);
        auto& q = cfg.series.quadrature;
        b.read("samples", q.n_samples);
        b.read("seed", q.seed);
        std::string mode = error_mode_name(q.error_mode);
        b.read("error_mode", mode);
        b.read("target_std_error", q.target_std_error);
        b.read("max_samples", q.max_samples);
        b.finish();
        if (mode == "fixed_budget")
            q.error_mode = ErrorMode::fixed_budget;
        else if (mode == "standard_error")
            q.error_mode = ErrorMode::standard_error;
        else
            throw ConfigError(where(text, "quadrature.error_mode", "error_mode") +
                              ": expected 'fixed_budget' or 'standard_error'");
    }
    if (const json* p = top.child("ensemble")) {
        Block b(*p, "ensemble", text);
        if (const json* in = b.child("intensity")) {
            if (in->is_string() && in->get<std::string>() == "auto") {
                cfg.intensity_auto = true;
            }
            else if (in->is_number()) {
                cfg.intensity_auto = false;
                cfg.ensemble.intensity = in->get<double>();
            }
            else {
                throw ConfigError(where(text, "ensemble.intensity", "intensity") + ": expected a number or \"auto\"");
            }
        }
        b.read("replicates", cfg.ensemble.replicates);
        b.read("cap", cfg.ensemble.n_cap);
        b.read("bandwidth", cfg.ensemble.bandwidth);
        b.read("control_variate", cfg.ensemble.control_variate);
        b.finish();
    }
    if (const json* p = top.child("identities")) {
        Block b(*p, "identities", text);
        b.read("tolerance", cfg.identities.tolerance);
        b.read("match_tolerance", cfg.identities.match_tolerance);
        b.read("generator_tolerance", cfg.identities.generator_tolerance);
        b.read("mc_sigmas", cfg.identities.mc_sigmas);
        b.read("cases", cfg.identities.cases);
        b.read("t", cfg.identities.t);
        b.finish();
    }
    if (const json* p = top.child("functional")) {
        Block b(*p, "functional", text);
        b.read("arity", cfg.functional.arity);
        b.read("t", cfg.functional.t);
        b.finish();
    }
    if (const json* p = top.child("residual")) {
        Block b(*p, "residual", text);
        b.read("dr", cfg.residual.spec.dr);
        b.read("dv", cfg.residual.spec.dv);
        b.read("mc_sigmas", cfg.residual.spec.mc_sigmas);
        b.read("sweep_levels", cfg.residual.sweep_levels);
        b.read("sweep_t0", cfg.residual.sweep_t0);
        b.read("sweep_step", cfg.residual.sweep_step);
        b.read("slope_min", cfg.residual.slope_min);
        b.read("slope_max", cfg.residual.slope_max);
        b.finish();
    }
    if (const json* p = top.child("compare")) {
        Block b(*p, "compare", text);
        b.read("reference", cfg.compare.reference);
        b.read("candidate", cfg.compare.candidate);
        b.read("mc_sigmas", cfg.compare.mc_sigmas);
        b.finish();
    }
    if (const json* p = top.child("output")) {
        Block b(*p, "output", text);
        b.read("directory", cfg.output.directory);
        std::vector<std::string> formats;
        const bool had = b.child("formats") != nullptr;
        b.read("formats", formats);
        b.finish();
        if (had) {
            cfg.output.csv = cfg.output.json = false;
            for (const auto& f : formats) {
                if (f == "csv")
                    cfg.output.csv = true;
                else if (f == "json")
                    cfg.output.json = true;
                else
                    throw ConfigError(where(text, "output.formats", "formats") + ": unknown format '" + f + "'");
            }
        }
    }
    top.finish();
    validate_run_config(cfg);
    return cfg;
}

RunConfig load_run_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

void override_seed(RunConfig& cfg, std::uint64_t seed)
{
    cfg.series.quadrature.seed = seed;
}

void validate_run_config(const RunConfig& cfg)
{
    validated("potential/integrator", [&] { cfg.context.validate(); });
    validated("initial_data", [&] { cfg.initial.validate(); });
    validated("series", [&] { cfg.series.validate(); });
    validated("ensemble", [&] { cfg.resolved_ensemble().validate(); });
    validated("residual", [&] { cfg.residual.spec.validate(); });
    for (const auto& c : cfg.probes)
        if (c.size() != cfg.probes.front().size())
            throw ConfigError("key 'series.probes': every probe configuration needs the same number of points");
    if (cfg.identities.tolerance < 0 || cfg.identities.match_tolerance < 0 || cfg.identities.generator_tolerance < 0 ||
        cfg.identities.mc_sigmas < 0)
        throw ConfigError("invalid identities block: tolerances must be nonnegative");
    if (cfg.identities.cases == 0)
        throw ConfigError("invalid identities block: cases must be >= 1");
    if (cfg.functional.arity < 1 || cfg.functional.arity > 3)
        throw ConfigError("invalid functional block: arity must be 1, 2 or 3");
    if (!(cfg.residual.sweep_step > 0.0))
        throw ConfigError("invalid residual block: sweep_step must be positive");
    if (cfg.residual.sweep_levels == 1)
        throw ConfigError("invalid residual block: a sweep needs at least 2 levels (0 disables it)");
    if (!(cfg.compare.mc_sigmas > 0.0))
        throw ConfigError("invalid compare block: mc_sigmas must be positive");
}

} // namespace clusterflow::tools
