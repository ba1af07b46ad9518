#include <clusterflow/ensemble_oracle.hpp>
#include <clusterflow/errors.hpp>
#include <clusterflow/parallel.hpp>
#include <clusterflow/random.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace clusterflow {

using nlohmann::json;

void EnsembleConfig::validate() const
{
    if (!(intensity > 0.0) || !std::isfinite(intensity))
        throw std::invalid_argument("ensemble intensity must be positive");
    if (n_cap == 0)
        throw std::invalid_argument("ensemble particle cap must be positive");
    if (intensity > static_cast<double>(n_cap) / 3.0)
        throw std::invalid_argument("ensemble intensity must not exceed n_cap / 3");
    if (replicates < 100)
        throw std::invalid_argument("ensemble statistics need at least 100 replicates, got " +
                                    std::to_string(replicates));
    if (!(bandwidth > 0.0))
        throw std::invalid_argument("ensemble bandwidth must be positive");
}

double EnsembleState::mean_count() const
{
    if (realizations.empty())
        return 0.0;
    double s = 0.0;
    for (const auto& r : realizations)
        s += static_cast<double>(r.size());
    return s / static_cast<double>(realizations.size());
}

double EnsembleState::count_variance() const
{
    if (realizations.size() < 2)
        return 0.0;
    const double m = mean_count();
    double s = 0.0;
    for (const auto& r : realizations) {
        const double d = static_cast<double>(r.size()) - m;
        s += d * d;
    }
    return s / static_cast<double>(realizations.size() - 1);
}

EnsembleState sample_ensemble(const OneParticleDensity& f1, const EnsembleConfig& cfg)
{
    cfg.validate();
    if (!(f1.total_mass() > 0.0))
        throw QuadratureError("cannot sample an ensemble from a zero-mass density");
    EnsembleState st;
    st.realizations.resize(cfg.replicates);
    parallel_for(cfg.replicates, [&](std::size_t i) {
        RandomStream rng(cfg.seed, {0xe5, i});
        long n;
        do
            n = rng.poisson(cfg.intensity);
        while (n > static_cast<long>(cfg.n_cap));
        auto& r = st.realizations[i];
        r.reserve(static_cast<std::size_t>(n));
        for (long j = 0; j < n; ++j)
            r.push_back(f1.sample(rng));
    });
    return st;
}

EnsembleState evolve_ensemble(const EnsembleState& state, double t, const OperatorContext& ctx)
{
    ctx.validate();
    EnsembleState out = state;
    out.time = state.time + t;
    if (t == 0.0)
        return out;
    ctx.flow.steps_for(t);
    parallel_for(out.realizations.size(), [&](std::size_t i) {
        auto& r = out.realizations[i];
        if (!r.empty())
            flow_in_place(ctx.potential, ctx.flow, t, r);
    });
    return out;
}

const EmpiricalCell& EmpiricalDensity::cell(std::size_t time_index, std::size_t probe) const
{
    const std::size_t i = time_index * probes.size() + probe;
    if (time_index >= times.size() || probe >= probes.size() || i >= cells.size())
        throw std::out_of_range("empirical cell out of range");
    return cells[i];
}

namespace {

std::string fmt(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json probes_json(const std::vector<ProbeConfiguration>& probes)
{
    json out = json::array();
    for (const auto& p : probes) {
        json cfg = json::array();
        for (const auto& x : p)
            cfg.push_back(json{{"v", {x.v.x, x.v.y, x.v.z}}, {"r", {x.r.x, x.r.y, x.r.z}}});
        out.push_back(cfg);
    }
    return out;
}

std::vector<ProbeConfiguration> probes_from_json(const json& j)
{
    std::vector<ProbeConfiguration> out;
    for (const auto& p : j) {
        ProbeConfiguration c;
        for (const auto& x : p) {
            const auto& v = x.at("v");
            const auto& r = x.at("r");
            c.push_back(MacroPoint{{v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()},
                                   {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()}});
        }
        out.push_back(std::move(c));
    }
    return out;
}

/// Sum over ordered tuples of distinct particles of prod_l K(probe_l - x_{i_l}).
double tuple_sum(const std::vector<MacroPoint>& particles, const ProbeConfiguration& probe, double h,
                 std::vector<std::size_t>& used, std::size_t level)
{
    if (level == probe.size())
        return 1.0;
    double s = 0.0;
    for (std::size_t i = 0; i < particles.size(); ++i) {
        if (std::find(used.begin(), used.begin() + static_cast<std::ptrdiff_t>(level), i) !=
            used.begin() + static_cast<std::ptrdiff_t>(level))
            continue;
        const double kern = gaussian_kernel(probe[level], particles[i], h);
        if (kern == 0.0)
            continue;
        used[level] = i;
        s += kern * tuple_sum(particles, probe, h, used, level + 1);
    }
    return s;
}

} // namespace

void EmpiricalDensity::write_csv(std::ostream& out) const
{
    out << "t,probe_id,order,value,std_error,cumulative\n";
    for (const auto& c : cells)
        out << fmt(c.t) << ',' << c.probe_id << ",-1," << fmt(c.value) << ',' << fmt(c.std_error) << ','
            << fmt(c.value) << '\n';
}

std::string EmpiricalDensity::to_json(const std::string& config_json) const
{
    json j;
    j["kind"] = "oracle";
    j["arity"] = arity;
    j["bandwidth"] = bandwidth;
    j["potential"] = potential;
    j["replicates"] = replicates;
    j["sparse"] = sparse;
    j["control_variate"] = control_variate;
    j["times"] = times;
    j["probes"] = probes_json(probes);
    json cells_j = json::array();
    for (const auto& c : cells)
        cells_j.push_back({{"t", c.t}, {"probe_id", c.probe_id}, {"value", c.value}, {"std_error", c.std_error}});
    j["cells"] = cells_j;
    if (!config_json.empty())
        j["config"] = json::parse(config_json);
    return j.dump(2);
}

EmpiricalDensity EmpiricalDensity::from_json(const std::string& text)
{
    const json j = json::parse(text);
    if (j.value("kind", std::string{}) != "oracle")
        throw std::invalid_argument("document is not an oracle density");
    EmpiricalDensity d;
    d.arity = j.at("arity").get<std::size_t>();
    d.bandwidth = j.at("bandwidth").get<double>();
    d.potential = j.at("potential").get<std::string>();
    d.replicates = j.at("replicates").get<std::size_t>();
    d.sparse = j.at("sparse").get<bool>();
    d.control_variate = j.value("control_variate", false);
    d.times = j.at("times").get<std::vector<double>>();
    d.probes = probes_from_json(j.at("probes"));
    for (const auto& c : j.at("cells"))
        d.cells.push_back({c.at("t").get<double>(), c.at("probe_id").get<std::size_t>(), c.at("value").get<double>(),
                           c.at("std_error").get<double>()});
    if (d.cells.size() != d.times.size() * d.probes.size())
        throw std::invalid_argument("oracle density has an inconsistent cell count");
    return d;
}

namespace {

void check_probes(std::size_t k, const std::vector<ProbeConfiguration>& probes, double bandwidth)
{
    if (k == 0)
        throw std::invalid_argument("empirical density arity must be >= 1");
    if (!(bandwidth > 0.0))
        throw std::invalid_argument("empirical density bandwidth must be positive");
    for (const auto& p : probes)
        if (p.size() != k)
            throw ArityError("probe configuration does not match the empirical arity");
}

/// per[i][p]: tuple sum of realization i at probe p.
std::vector<std::vector<double>> replicate_values(const EnsembleState& state, std::size_t k,
                                                  const std::vector<ProbeConfiguration>& probes, double bandwidth)
{
    const std::size_t R = state.realizations.size();
    std::vector<std::vector<double>> per(R, std::vector<double>(probes.size(), 0.0));
    parallel_for(R, [&](std::size_t i) {
        const auto& r = state.realizations[i];
        if (r.size() < k)
            return;
        std::vector<std::size_t> used(k);
        for (std::size_t p = 0; p < probes.size(); ++p)
            per[i][p] = tuple_sum(r, probes[p], bandwidth, used, 0);
    });
    return per;
}

MCEstimate replicate_mean(const std::vector<std::vector<double>>& per, std::size_t p)
{
    double mean = 0.0, m2 = 0.0;
    const std::size_t R = per.size();
    for (std::size_t i = 0; i < R; ++i) {
        const double x = per[i][p];
        const double delta = x - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (x - mean);
    }
    const double se = R > 1 ? std::sqrt(m2 / static_cast<double>(R - 1) / static_cast<double>(R)) : 0.0;
    return {mean, se, R, false};
}

bool is_sparse(const EnsembleState& state, std::size_t k)
{
    return std::none_of(state.realizations.begin(), state.realizations.end(),
                        [k](const auto& r) { return r.size() >= k; });
}

} // namespace

EmpiricalDensity empirical_phase_density(const EnsembleState& state, std::size_t k,
                                         const std::vector<ProbeConfiguration>& probes, double bandwidth)
{
    check_probes(k, probes, bandwidth);
    EmpiricalDensity d;
    d.arity = k;
    d.bandwidth = bandwidth;
    d.replicates = state.realizations.size();
    d.times = {state.time};
    d.probes = probes;
    d.sparse = is_sparse(state, k);
    const auto per = replicate_values(state, k, probes, bandwidth);
    for (std::size_t p = 0; p < probes.size(); ++p) {
        const auto e = replicate_mean(per, p);
        d.cells.push_back({state.time, p, e.value, e.std_error});
    }
    return d;
}

EmpiricalDensity run_oracle(const OneParticleDensity& f1, const EnsembleConfig& cfg, const OperatorContext& ctx,
                            const std::vector<double>& times, std::size_t k,
                            const std::vector<ProbeConfiguration>& probes)
{
    if (times.empty())
        throw std::invalid_argument("oracle needs at least one time");
    check_probes(k, probes, cfg.bandwidth);
    const auto initial = sample_ensemble(f1, cfg);
    EmpiricalDensity out;
    out.arity = k;
    out.bandwidth = cfg.bandwidth;
    out.potential = describe_potential(ctx.potential);
    out.replicates = cfg.replicates;
    out.control_variate = cfg.control_variate;
    out.probes = probes;
    out.times = times;
    out.sparse = is_sparse(initial, k);

    OperatorContext free_ctx = ctx;
    free_ctx.potential = PotentialSpec{};
    free_ctx.potential.kind = PotentialKind::free;
    const double scale = std::pow(cfg.intensity / f1.total_mass(), static_cast<double>(k));

    for (double t : times) {
        auto per = replicate_values(evolve_ensemble(initial, t, ctx), k, probes, cfg.bandwidth);
        if (cfg.control_variate) {
            const auto base = replicate_values(evolve_ensemble(initial, t, free_ctx), k, probes, cfg.bandwidth);
            for (std::size_t i = 0; i < per.size(); ++i)
                for (std::size_t p = 0; p < probes.size(); ++p)
                    per[i][p] -= base[i][p];
        }
        for (std::size_t p = 0; p < probes.size(); ++p) {
            auto e = replicate_mean(per, p);
            if (cfg.control_variate) {
                double expected = scale;
                for (const auto& xi : probes[p])
                    expected *= mollified_free_transport(f1, t, cfg.bandwidth, xi);
                e.value += expected;
            }
            out.cells.push_back({t, p, e.value, e.std_error});
        }
    }
    return out;
}

namespace {

bool same_probes(const std::vector<ProbeConfiguration>& a, const std::vector<ProbeConfiguration>& b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size())
            return false;
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            const auto& x = a[i][j];
            const auto& y = b[i][j];
            if (x.v.x != y.v.x || x.v.y != y.v.y || x.v.z != y.v.z || x.r.x != y.r.x || x.r.y != y.r.y ||
                x.r.z != y.r.z)
                return false;
        }
    }
    return true;
}

void require_match(bool ok, const std::string& what)
{
    if (!ok)
        throw ConfigMismatchError("compared runs differ in " + what);
}

void check_common(std::size_t arity_a, std::size_t arity_b, double h_a, double h_b, const std::string& pot_a,
                  const std::string& pot_b, const std::vector<double>& t_a, const std::vector<double>& t_b,
                  const std::vector<ProbeConfiguration>& p_a, const std::vector<ProbeConfiguration>& p_b)
{
    require_match(arity_a == arity_b, "arity");
    require_match(std::abs(h_a - h_b) <= 1e-12 * std::max(std::abs(h_a), std::abs(h_b)), "bandwidth");
    require_match(pot_a == pot_b, "potential");
    require_match(t_a == t_b, "times");
    require_match(same_probes(p_a, p_b), "probes");
}

void summarize(DiscrepancyReport& rep, const std::vector<double>& times, std::size_t orders)
{
    for (double t : times) {
        std::vector<OrderDiscrepancy> row(orders);
        for (std::size_t n = 0; n < orders; ++n) {
            row[n].t = t;
            row[n].order = n;
        }
        for (const auto& p : rep.probes) {
            if (p.t != t)
                continue;
            row[p.order].aggregate += std::abs(p.delta);
            row[p.order].error_bar += p.std_error;
        }
        rep.per_time.insert(rep.per_time.end(), row.begin(), row.end());
    }
    rep.overall.assign(orders, OrderDiscrepancy{});
    for (std::size_t n = 0; n < orders; ++n)
        rep.overall[n].order = n;
    for (const auto& row : rep.per_time) {
        rep.overall[row.order].aggregate += row.aggregate;
        rep.overall[row.order].error_bar += row.error_bar;
    }
    rep.monotone = true;
    for (std::size_t i = 0; i + 1 < rep.per_time.size(); ++i) {
        const auto& a = rep.per_time[i];
        const auto& b = rep.per_time[i + 1];
        if (a.t == b.t && b.aggregate > a.aggregate)
            rep.monotone = false;
    }
}

} // namespace

bool DiscrepancyReport::final_order_within(double sigmas) const
{
    if (per_time.empty())
        return false;
    std::size_t top = 0;
    for (const auto& r : per_time)
        top = std::max(top, r.order);
    for (const auto& r : per_time)
        if (r.order == top && r.aggregate > sigmas * r.error_bar)
            return false;
    return true;
}

void DiscrepancyReport::write_csv(std::ostream& out) const
{
    out << "t,probe_id,order,reference,candidate,delta,std_error\n";
    for (const auto& p : probes)
        out << fmt(p.t) << ',' << p.probe_id << ',' << p.order << ',' << fmt(p.reference) << ','
            << fmt(p.candidate) << ',' << fmt(p.delta) << ',' << fmt(p.std_error) << '\n';
}

std::string DiscrepancyReport::to_json(const std::string& config_json) const
{
    json j;
    j["kind"] = "discrepancy";
    json probes_j = json::array();
    for (const auto& p : probes)
        probes_j.push_back({{"t", p.t},
                            {"probe_id", p.probe_id},
                            {"order", p.order},
                            {"reference", p.reference},
                            {"candidate", p.candidate},
                            {"delta", p.delta},
                            {"std_error", p.std_error}});
    j["probes"] = probes_j;
    auto rows = [](const std::vector<OrderDiscrepancy>& v) {
        json a = json::array();
        for (const auto& r : v)
            a.push_back({{"t", r.t}, {"order", r.order}, {"aggregate", r.aggregate}, {"error_bar", r.error_bar}});
        return a;
    };
    j["per_time"] = rows(per_time);
    j["overall"] = rows(overall);
    j["monotone"] = monotone;
    if (!config_json.empty())
        j["config"] = json::parse(config_json);
    return j.dump(2);
}

DiscrepancyReport compare_to_series(const EmpiricalDensity& oracle, const SolutionTrace& series)
{
    require_match(series.observation == Observation::mollified, "observation mode (series must be mollified)");
    check_common(oracle.arity, series.arity, oracle.bandwidth, series.bandwidth, oracle.potential, series.potential,
                 oracle.times, series.times, oracle.probes, series.probes);
    DiscrepancyReport rep;
    const std::size_t orders = series.truncation_order + 1;
    for (std::size_t ti = 0; ti < oracle.times.size(); ++ti)
        for (std::size_t p = 0; p < oracle.probes.size(); ++p) {
            const auto& o = oracle.cell(ti, p);
            for (std::size_t n = 0; n < orders; ++n) {
                const auto& s = series.cell(ti, p, n);
                ProbeDiscrepancy d;
                d.t = o.t;
                d.probe_id = p;
                d.order = n;
                d.reference = o.value;
                d.candidate = s.cumulative;
                d.delta = o.value - s.cumulative;
                d.std_error = std::sqrt(o.std_error * o.std_error + s.cumulative_std_error * s.cumulative_std_error);
                rep.probes.push_back(d);
            }
        }
    summarize(rep, oracle.times, orders);
    return rep;
}

DiscrepancyReport compare_traces(const SolutionTrace& a, const SolutionTrace& b)
{
    check_common(a.arity, b.arity, a.bandwidth, b.bandwidth, a.potential, b.potential, a.times, b.times, a.probes,
                 b.probes);
    require_match(a.truncation_order == b.truncation_order, "truncation order");
    require_match(a.observation == b.observation, "observation mode");
    DiscrepancyReport rep;
    const std::size_t orders = a.truncation_order + 1;
    for (std::size_t ti = 0; ti < a.times.size(); ++ti)
        for (std::size_t p = 0; p < a.probes.size(); ++p)
            for (std::size_t n = 0; n < orders; ++n) {
                const auto& x = a.cell(ti, p, n);
                const auto& y = b.cell(ti, p, n);
                ProbeDiscrepancy d;
                d.t = x.t;
                d.probe_id = p;
                d.order = n;
                d.reference = x.cumulative;
                d.candidate = y.cumulative;
                d.delta = x.cumulative - y.cumulative;
                d.std_error = std::sqrt(x.cumulative_std_error * x.cumulative_std_error +
                                        y.cumulative_std_error * y.cumulative_std_error);
                rep.probes.push_back(d);
            }
    summarize(rep, a.times, orders);
    return rep;
}

} // namespace clusterflow
