#include <clusterflow/cluster_cumulants.hpp>
#include <clusterflow/errors.hpp>
#include <clusterflow/exact_sum.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>

namespace clusterflow {

ClusterIndexSet ClusterIndexSet::standard(std::size_t k, std::size_t n)
{
    ClusterIndexSet g;
    for (std::size_t i = 0; i < k; ++i)
        g.cluster.push_back(i);
    for (std::size_t i = 0; i < n; ++i)
        g.singles.push_back(k + i);
    return g;
}

void ClusterIndexSet::validate() const
{
    if (cluster.empty())
        throw std::invalid_argument("cluster element must hold at least one particle");
    std::vector<std::size_t> all(cluster);
    all.insert(all.end(), singles.begin(), singles.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw std::invalid_argument("cluster index set has a repeated index");
}

std::int64_t cumulant_coefficient(std::size_t block_count)
{
    if (block_count == 0)
        throw std::invalid_argument("a partition has at least one block");
    std::int64_t factorial = 1;
    for (std::size_t i = 2; i < block_count; ++i)
        factorial *= static_cast<std::int64_t>(i);
    return (block_count % 2 == 1) ? factorial : -factorial;
}

std::vector<SetPartition> enumerate_partitions(std::size_t m)
{
    if (m > max_partition_set)
        throw OrderCapError("partition enumeration is capped at sets of " + std::to_string(max_partition_set) +
                            " elements, got " + std::to_string(m));
    std::vector<SetPartition> out;
    if (m == 0) {
        out.push_back({});
        return out;
    }
    // Restricted growth strings: a[0] = 0, a[i] <= 1 + max(a[0..i-1]).
    std::vector<std::size_t> a(m, 0), prefix_max(m, 0);
    for (;;) {
        SetPartition p;
        p.blocks.resize(prefix_max[m - 1] + 1);
        for (std::size_t i = 0; i < m; ++i)
            p.blocks[a[i]].push_back(i);
        out.push_back(std::move(p));

        std::size_t i = m - 1;
        while (i > 0 && a[i] == prefix_max[i - 1] + 1)
            --i;
        if (i == 0)
            break;
        ++a[i];
        prefix_max[i] = std::max(prefix_max[i - 1], a[i]);
        for (std::size_t j = i + 1; j < m; ++j) {
            a[j] = 0;
            prefix_max[j] = prefix_max[i];
        }
    }
    return out;
}

std::vector<SetPartition> enumerate_partitions(const ClusterIndexSet& ground)
{
    ground.validate();
    return enumerate_partitions(ground.element_count());
}

namespace {

struct MaskedTerm
{
    std::int64_t coefficient;
    std::vector<std::uint32_t> masks;
};

struct PartitionTables
{
    std::mutex mutex;
    std::array<std::unique_ptr<std::vector<CumulantTerm>>, max_partition_set + 1> terms;
    std::array<std::unique_ptr<std::vector<MaskedTerm>>, max_partition_set + 1> masked;
};

PartitionTables& tables()
{
    static PartitionTables t;
    return t;
}

const std::vector<MaskedTerm>& masked_terms(std::size_t m)
{
    const auto& terms = cumulant_terms(m);
    auto& tab = tables();
    std::lock_guard lock(tab.mutex);
    auto& slot = tab.masked[m];
    if (!slot) {
        auto built = std::make_unique<std::vector<MaskedTerm>>();
        for (const auto& term : terms) {
            MaskedTerm mt{term.coefficient, {}};
            for (const auto& block : term.partition.blocks) {
                std::uint32_t mask = 0;
                for (auto e : block)
                    mask |= 1u << e;
                mt.masks.push_back(mask);
            }
            built->push_back(std::move(mt));
        }
        slot = std::move(built);
    }
    return *slot;
}

} // namespace

const std::vector<CumulantTerm>& cumulant_terms(std::size_t m)
{
    if (m > max_partition_set)
        throw OrderCapError("partition enumeration is capped at sets of " + std::to_string(max_partition_set) +
                            " elements, got " + std::to_string(m));
    auto& tab = tables();
    std::lock_guard lock(tab.mutex);
    auto& slot = tab.terms[m];
    if (!slot) {
        auto built = std::make_unique<std::vector<CumulantTerm>>();
        for (auto& p : enumerate_partitions(m)) {
            const auto c = cumulant_coefficient(std::max<std::size_t>(p.blocks.size(), 1));
            built->push_back({std::move(p), c});
        }
        slot = std::move(built);
    }
    return *slot;
}

std::int64_t partition_identity_sum(std::size_t m)
{
    if (m == 0)
        throw std::invalid_argument("partition identity needs a nonempty set");
    std::int64_t sum = 0;
    for (const auto& term : cumulant_terms(m))
        sum += term.coefficient;
    return sum;
}

std::uint64_t bell_number(std::size_t m)
{
    // Bell triangle.
    std::vector<std::uint64_t> row{1};
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::uint64_t> next{row.back()};
        for (auto x : row)
            next.push_back(next.back() + x);
        row = std::move(next);
    }
    return row.front();
}

namespace {

void gather_indices(const ClusterIndexSet& ground, std::uint32_t mask, std::vector<std::size_t>& out)
{
    out.clear();
    if (mask & 1u)
        out.insert(out.end(), ground.cluster.begin(), ground.cluster.end());
    for (std::size_t e = 1; e < ground.element_count(); ++e)
        if (mask & (1u << e))
            out.push_back(ground.singles[e - 1]);
}

void move_block(const OperatorContext& ctx, ClusterFlow kind, double t, std::span<MacroPoint> block)
{
    if (kind == ClusterFlow::evolution)
        evolve_points(ctx, -t, block);
    else
        scatter_points(ctx, t, block);
}

void check_ground(const ClusterIndexSet& ground, std::size_t point_count)
{
    ground.validate();
    if (ground.element_count() > max_partition_set)
        throw OrderCapError("cumulant ground set exceeds " + std::to_string(max_partition_set) + " elements");
    for (auto i : ground.cluster)
        if (i >= point_count)
            throw ArityError("cumulant index " + std::to_string(i) + " outside the point list");
    for (auto i : ground.singles)
        if (i >= point_count)
            throw ArityError("cumulant index " + std::to_string(i) + " outside the point list");
}

/// Image of every nonempty subset of ground elements under its own flow.
class SubsetImages
{
public:
    SubsetImages(const OperatorContext& ctx, ClusterFlow kind, double t, const ClusterIndexSet& ground,
                 std::span<const MacroPoint> points)
        : images_(std::size_t{1} << ground.element_count()),
          indices_(std::size_t{1} << ground.element_count())
    {
        std::vector<MacroPoint> buffer;
        for (std::uint32_t mask = 1; mask < images_.size(); ++mask) {
            gather_indices(ground, mask, indices_[mask]);
            buffer.clear();
            for (auto i : indices_[mask])
                buffer.push_back(points[i]);
            move_block(ctx, kind, t, buffer);
            images_[mask] = buffer;
        }
    }

    void place(std::uint32_t mask, std::span<MacroPoint> target) const
    {
        const auto& idx = indices_[mask];
        const auto& img = images_[mask];
        for (std::size_t j = 0; j < idx.size(); ++j)
            target[idx[j]] = img[j];
    }

private:
    std::vector<std::vector<MacroPoint>> images_;
    std::vector<std::vector<std::size_t>> indices_;
};

template <class Next>
double sum_over_partitions(const OperatorContext& ctx, ClusterFlow kind, double t, const ClusterIndexSet& ground,
                           std::span<const MacroPoint> points, Next&& next)
{
    const auto& terms = masked_terms(ground.element_count());
    const SubsetImages images(ctx, kind, t, ground, points);
    std::vector<MacroPoint> moved(points.begin(), points.end());
    IntegerWeightedSum acc;
    for (const auto& term : terms) {
        for (auto mask : term.masks)
            images.place(mask, moved);
        acc.add(term.coefficient, next(std::span<const MacroPoint>(moved)));
    }
    return acc.total();
}

double cumulant_value(const OperatorContext& ctx, ClusterFlow kind, double t, const ClusterIndexSet& ground,
                      const PhaseFunction& f, std::span<const MacroPoint> points)
{
    if (points.size() != f.arity())
        throw ArityError("cumulant on arity-" + std::to_string(f.arity()) + " function applied to " +
                         std::to_string(points.size()) + " points");
    check_ground(ground, points.size());
    return sum_over_partitions(ctx, kind, t, ground, points,
                               [&](std::span<const MacroPoint> p) { return f.evaluate_unchecked(p); });
}

} // namespace

void apply_partition_flow(const OperatorContext& ctx, ClusterFlow kind, double t, const ClusterIndexSet& ground,
                          const SetPartition& partition, std::span<MacroPoint> points)
{
    check_ground(ground, points.size());
    std::vector<std::size_t> idx;
    std::vector<MacroPoint> buffer;
    std::uint32_t seen = 0;
    for (const auto& block : partition.blocks) {
        std::uint32_t mask = 0;
        for (auto e : block) {
            if (e >= ground.element_count())
                throw std::invalid_argument("partition element outside the ground set");
            mask |= 1u << e;
        }
        if (block.empty() || (mask & seen))
            throw std::invalid_argument("partition blocks must be nonempty and disjoint");
        seen |= mask;
        gather_indices(ground, mask, idx);
        buffer.clear();
        for (auto i : idx)
            buffer.push_back(points[i]);
        move_block(ctx, kind, t, buffer);
        for (std::size_t j = 0; j < idx.size(); ++j)
            points[idx[j]] = buffer[j];
    }
    if (seen != (1u << ground.element_count()) - 1)
        throw std::invalid_argument("partition does not cover the ground set");
}

double apply_cumulant(const OperatorContext& ctx, double t, const ClusterIndexSet& ground, const PhaseFunction& f,
                      std::span<const MacroPoint> points)
{
    return cumulant_value(ctx, ClusterFlow::evolution, t, ground, f, points);
}

double apply_scattering_cumulant(const OperatorContext& ctx, double t, const ClusterIndexSet& ground,
                                 const PhaseFunction& f, std::span<const MacroPoint> points)
{
    return cumulant_value(ctx, ClusterFlow::scattering, t, ground, f, points);
}

namespace {

std::int64_t factorial(std::size_t n)
{
    std::int64_t r = 1;
    for (std::size_t i = 2; i <= n; ++i)
        r *= static_cast<std::int64_t>(i);
    return r;
}

/// One group's chunk assignment: particle i (0-based) receives `sizes[i]`
/// consecutive indices starting at `starts[i]`.
struct GroupChoice
{
    std::vector<CumulantFactor> factors;
    std::vector<std::size_t> sizes;
};

/// Walks the non-increasing chains r_1 = m >= r_2 >= ... >= r_len >= r_{len+1} = 0.
/// Particle i (1-based, i = 1..len) gets d_i = r_{len+1-i} - r_{len+2-i} indices
/// base + r_{len+2-i}, ..., base + r_{len+1-i} - 1 (0-based).
std::vector<GroupChoice> group_choices(std::size_t len, std::size_t m, std::size_t base)
{
    std::vector<GroupChoice> out;
    std::vector<std::size_t> r(len + 2, 0); // r[1..len+1]
    r[1] = m;
    auto emit = [&] {
        GroupChoice g;
        for (std::size_t i = 1; i <= len; ++i) {
            const std::size_t hi = r[len + 1 - i];
            const std::size_t lo = r[len + 2 - i];
            const std::size_t d = hi - lo;
            g.sizes.push_back(d);
            if (d == 0)
                continue; // a first-order cumulant of one particle is the identity
            CumulantFactor f;
            f.ground.cluster = {i - 1};
            for (std::size_t c = lo; c < hi; ++c)
                f.ground.singles.push_back(base + c);
            g.factors.push_back(std::move(f));
        }
        out.push_back(std::move(g));
    };
    auto walk = [&](auto&& self, std::size_t pos) -> void {
        if (pos > len) {
            emit();
            return;
        }
        for (std::size_t v = 0; v <= r[pos - 1]; ++v) {
            r[pos] = v;
            self(self, pos + 1);
        }
    };
    if (len == 0) {
        if (m == 0)
            emit();
        return out;
    }
    walk(walk, 2);
    return out;
}

void expand_groups(std::size_t k, std::size_t n, bool renormalized, const std::vector<std::size_t>& m,
                   std::size_t j, std::int64_t numerator, std::int64_t denominator,
                   std::vector<CumulantFactor>& word, std::vector<OperatorWord>& out)
{
    if (j == m.size()) {
        if (numerator % denominator != 0)
            throw std::logic_error("non-integer coefficient in operator expansion");
        const std::int64_t sign = (m.size() % 2 == 0) ? 1 : -1;
        out.push_back({sign * (numerator / denominator), word});
        return;
    }
    std::size_t used = 0;
    for (std::size_t i = 0; i <= j; ++i)
        used += m[i];
    const std::size_t level = k + n - used; // L_j
    const std::size_t len = renormalized ? k : level;
    for (auto& g : group_choices(len, m[j], level)) {
        std::int64_t denom = denominator;
        for (auto d : g.sizes)
            denom *= factorial(d);
        const auto mark = word.size();
        word.insert(word.end(), g.factors.begin(), g.factors.end());
        expand_groups(k, n, renormalized, m, j + 1, numerator, denom, word, out);
        word.resize(mark);
    }
}

void expand_compositions(std::size_t k, std::size_t n, bool renormalized, std::vector<std::size_t>& m,
                         std::size_t used, std::size_t r, std::vector<OperatorWord>& out)
{
    if (m.size() == r) {
        std::vector<CumulantFactor> word;
        CumulantFactor lead;
        lead.ground = ClusterIndexSet::standard(k, n - used);
        word.push_back(std::move(lead));
        expand_groups(k, n, renormalized, m, 0, factorial(n), factorial(n - used), word, out);
        return;
    }
    for (std::size_t mj = 1; mj + used <= n; ++mj) {
        m.push_back(mj);
        expand_compositions(k, n, renormalized, m, used + mj, r, out);
        m.pop_back();
    }
}

} // namespace

OperatorExpansion expand_V(std::size_t k, std::size_t n, bool renormalized)
{
    if (k == 0)
        throw std::invalid_argument("cluster size must be >= 1");
    if (n > max_expansion_order)
        throw OrderCapError("expansion order " + std::to_string(n) + " exceeds the cap " +
                            std::to_string(max_expansion_order));
    OperatorExpansion e;
    e.cluster_size = k;
    e.order = n;
    e.renormalized = renormalized;
    for (std::size_t r = 0; r <= n; ++r) {
        std::vector<std::size_t> m;
        expand_compositions(k, n, renormalized, m, 0, r, e.words);
    }
    return e;
}

namespace {

const OperatorExpansion& cached_expansion(std::size_t k, std::size_t n, bool renormalized)
{
    static std::mutex mutex;
    static std::map<std::tuple<std::size_t, std::size_t, bool>, std::unique_ptr<OperatorExpansion>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{k, n, renormalized}];
    if (!slot)
        slot = std::make_unique<OperatorExpansion>(expand_V(k, n, renormalized));
    return *slot;
}

double evaluate_word(const OperatorContext& ctx, double t, const OperatorWord& word, std::size_t pos,
                     const PhaseFunction& f, std::span<const MacroPoint> points)
{
    if (pos == word.factors.size())
        return f.evaluate_unchecked(points);
    return sum_over_partitions(ctx, ClusterFlow::scattering, t, word.factors[pos].ground, points,
                               [&](std::span<const MacroPoint> p) { return evaluate_word(ctx, t, word, pos + 1, f, p); });
}

} // namespace

double evaluate_expansion(const OperatorContext& ctx, double t, const OperatorExpansion& expansion,
                          const PhaseFunction& f, std::span<const MacroPoint> points)
{
    const std::size_t arity = expansion.cluster_size + expansion.order;
    if (points.size() != arity || f.arity() != arity)
        throw ArityError("expansion of arity " + std::to_string(arity) + " applied to " +
                         std::to_string(points.size()) + " points");
    IntegerWeightedSum acc;
    for (const auto& word : expansion.words)
        acc.add(word.coefficient, evaluate_word(ctx, t, word, 0, f, points));
    return acc.total();
}

double evaluate_V(const OperatorContext& ctx, double t, std::size_t n, std::size_t k, const PhaseFunction& f,
                  std::span<const MacroPoint> points, bool renormalized)
{
    return evaluate_expansion(ctx, t, cached_expansion(k, n, renormalized), f, points);
}

double evaluate_V2_explicit(const OperatorContext& ctx, double t, std::size_t k, const PhaseFunction& f,
                            std::span<const MacroPoint> points)
{
    if (points.size() != k + 1 || f.arity() != k + 1)
        throw ArityError("second-order V needs k + 1 points");
    std::vector<MacroPoint> all(points.begin(), points.end());
    scatter_points(ctx, t, all);
    const double joint = f.evaluate_unchecked(all);

    std::vector<MacroPoint> cluster_moved(points.begin(), points.end());
    scatter_points(ctx, t, std::span<MacroPoint>(cluster_moved.data(), k));
    const double cluster_only = f.evaluate_unchecked(cluster_moved);

    double pair_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        auto moved = cluster_moved;
        std::array<MacroPoint, 2> pair{moved[j], moved[k]};
        scatter_points(ctx, t, pair);
        moved[j] = pair[0];
        moved[k] = pair[1];
        pair_sum += f.evaluate_unchecked(moved);
    }
    return joint - pair_sum + static_cast<double>(k - 1) * cluster_only;
}

void ExpansionOrderConfig::validate() const
{
    if (n_max > max_expansion_order)
        throw OrderCapError("n_max " + std::to_string(n_max) + " exceeds the cap " +
                            std::to_string(max_expansion_order));
}

namespace {

MCEstimate integrate_V(const OperatorContext& ctx, double t, std::size_t n, std::size_t k, const PhaseFunction& f,
                       std::span<const MacroPoint> points, const QuadratureSpec& q,
                       const SampleableDensity& proposal, std::uint64_t stream, bool renormalized)
{
    if (points.size() != k)
        throw ArityError("V operator needs exactly k fixed points");
    if (f.arity() != k + n)
        throw ArityError("V operator of order " + std::to_string(n) + " needs a function of arity k + n");
    const auto& expansion = cached_expansion(k, n, renormalized);
    if (n == 0) {
        MCEstimate e;
        e.value = evaluate_expansion(ctx, t, expansion, f, points);
        return e;
    }
    const std::vector<MacroPoint> fixed(points.begin(), points.end());
    MultiIntegrand integrand = [&](std::span<const MacroPoint> extra, std::span<double> out) {
        std::vector<MacroPoint> all(fixed);
        all.insert(all.end(), extra.begin(), extra.end());
        out[0] = evaluate_expansion(ctx, t, expansion, f, all);
    };
    return mc_integrate_multi(n, 1, integrand, q, proposal, stream).front();
}

} // namespace

MCEstimate apply_V(const OperatorContext& ctx, double t, std::size_t n, std::size_t k, const PhaseFunction& f,
                   std::span<const MacroPoint> points, const QuadratureSpec& q, const SampleableDensity& proposal,
                   std::uint64_t stream)
{
    return integrate_V(ctx, t, n, k, f, points, q, proposal, stream, false);
}

MCEstimate apply_V_renormalized(const OperatorContext& ctx, double t, std::size_t n, std::size_t k,
                                const PhaseFunction& f, std::span<const MacroPoint> points, const QuadratureSpec& q,
                                const SampleableDensity& proposal, std::uint64_t stream)
{
    return integrate_V(ctx, t, n, k, f, points, q, proposal, stream, true);
}

double poisson_bracket(const PotentialSpec& potential, const PhaseFunction& f, std::span<const MacroPoint> points,
                       double dv)
{
    if (points.size() != f.arity())
        throw ArityError("bracket arity mismatch");
    if (!potential.interacting())
        return 0.0;
    std::vector<MacroPoint> p(points.begin(), points.end());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        Vec3 grad{};
        for (std::size_t j = 0; j < p.size(); ++j)
            if (j != i)
                grad += pair_gradient(potential, p[i].r - p[j].r);
        const double g[3] = {grad.x, grad.y, grad.z};
        for (int c = 0; c < 3; ++c) {
            if (g[c] == 0.0)
                continue;
            auto shifted = [&](double h) {
                auto q = p;
                double* comp = c == 0 ? &q[i].v.x : c == 1 ? &q[i].v.y : &q[i].v.z;
                *comp += h;
                return f.evaluate_unchecked(q);
            };
            const double d = (-shifted(2 * dv) + 8 * shifted(dv) - 8 * shifted(-dv) + shifted(-2 * dv)) / (12 * dv);
            total += g[c] * d;
        }
    }
    return total;
}

GeneratorReport generator_check(const OperatorContext& ctx, std::size_t n, std::size_t k, const PhaseFunction& f,
                                std::span<const MacroPoint> points, double t)
{
    if (points.size() != k + n || f.arity() != k + n)
        throw ArityError("generator check needs k + n points");
    if (!(t > 0.0))
        throw std::invalid_argument("generator check needs t > 0");
    const double base = n == 0 ? f(points) : 0.0;
    auto quotient = [&](double s) { return (evaluate_V(ctx, s, n, k, f, points) - base) / s; };
    GeneratorReport rep;
    rep.order = n;
    rep.t = t;
    rep.raw = quotient(t);
    rep.estimate = 2.0 * quotient(t / 2) - rep.raw;
    rep.reference = n == 0 ? poisson_bracket(ctx.potential, f, points) : 0.0;
    return rep;
}

} // namespace clusterflow
