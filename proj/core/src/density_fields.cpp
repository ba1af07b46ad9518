#include <clusterflow/density_fields.hpp>
#include <clusterflow/errors.hpp>
#include <clusterflow/parallel.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace clusterflow {

namespace {

double squared_distance(const MacroPoint& a, const MacroPoint& b)
{
    return norm2(a.v - b.v) + norm2(a.r - b.r);
}

double kernel_normalization(double h)
{
    const double s = 2.0 * std::numbers::pi * h * h;
    return 1.0 / (s * s * s);
}

} // namespace

double gaussian_kernel(const MacroPoint& d, double h)
{
    return kernel_normalization(h) * std::exp(-(norm2(d.v) + norm2(d.r)) / (2.0 * h * h));
}

double gaussian_kernel(const MacroPoint& a, const MacroPoint& b, double h)
{
    return kernel_normalization(h) * std::exp(-squared_distance(a, b) / (2.0 * h * h));
}

OneParticleDensity::OneParticleDensity(std::vector<WeightedSample> samples, double bandwidth)
    : samples_(std::move(samples)), bandwidth_(bandwidth)
{
    if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_))
        throw std::invalid_argument("density bandwidth must be finite and > 0");
    cumulative_.reserve(samples_.size());
    double running = 0.0;
    for (const auto& s : samples_) {
        if (!(s.weight >= 0.0) || !std::isfinite(s.weight))
            throw std::invalid_argument("density weights must be finite and >= 0");
        if (!is_finite(s.point))
            throw std::invalid_argument("density sample points must be finite");
        running += s.weight;
        cumulative_.push_back(running);
    }
    total_mass_ = running;
}

double OneParticleDensity::evaluate(const MacroPoint& xi) const
{
    // exp underflows to zero past this many bandwidths squared; skip the call
    constexpr double cutoff = 1400.0;
    const double inv = 1.0 / (2.0 * bandwidth_ * bandwidth_);
    double sum = 0.0;
    for (const auto& s : samples_) {
        const double e = squared_distance(xi, s.point) * inv;
        if (e < cutoff)
            sum += s.weight * std::exp(-e);
    }
    return sum * kernel_normalization(bandwidth_);
}

const MacroPoint& OneParticleDensity::sample_centre(RandomStream& rng) const
{
    if (!(total_mass_ > 0.0))
        throw QuadratureError("cannot sample from a zero-mass density");
    const double u = rng.uniform() * total_mass_;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end())
        --it;
    return samples_[static_cast<std::size_t>(it - cumulative_.begin())].point;
}

MacroPoint OneParticleDensity::sample(RandomStream& rng) const
{
    MacroPoint p = sample_centre(rng);
    for (std::size_t c = 0; c < 3; ++c)
        p.v[c] += bandwidth_ * rng.normal();
    for (std::size_t c = 0; c < 3; ++c)
        p.r[c] += bandwidth_ * rng.normal();
    return p;
}

OneParticleDensity OneParticleDensity::scaled(double factor) const
{
    if (!(factor >= 0.0))
        throw std::invalid_argument("density scale factor must be >= 0");
    auto copy = samples_;
    for (auto& s : copy)
        s.weight *= factor;
    return OneParticleDensity(std::move(copy), bandwidth_);
}

OneParticleDensity OneParticleDensity::with_bandwidth(double bandwidth) const
{
    return OneParticleDensity(samples_, bandwidth);
}

OneParticleDensity OneParticleDensity::with_mass(double mass) const
{
    if (!(total_mass_ > 0.0))
        throw std::invalid_argument("cannot rescale a zero-mass density");
    return scaled(mass / total_mass_);
}

StreamedDensity::StreamedDensity(std::shared_ptr<const SampleableDensity> base, double time)
    : base_(std::move(base)), time_(time)
{
    if (!base_)
        throw std::invalid_argument("streamed density needs a base density");
}

double StreamedDensity::evaluate(const MacroPoint& xi) const
{
    return base_->evaluate({xi.v, xi.r - time_ * xi.v});
}

MacroPoint StreamedDensity::sample(RandomStream& rng) const
{
    MacroPoint p = base_->sample(rng);
    p.r += time_ * p.v;
    return p;
}

void InitialDataSpec::validate() const
{
    if (!(temperature > 0.0) || !(spatial_width > 0.0))
        throw std::invalid_argument("initial temperature and spatial width must be > 0");
    if (!(mass >= 0.0) || !std::isfinite(mass))
        throw std::invalid_argument("initial mass must be finite and >= 0");
    if (components == 0)
        throw std::invalid_argument("initial data needs at least one component");
    if (!(bandwidth > 0.0))
        throw std::invalid_argument("initial bandwidth must be > 0");
}

double mollified_free_transport(const OneParticleDensity& d, double t, double h, const MacroPoint& p)
{
    // Per coordinate the (v, r) pair of one component is Gaussian with
    // covariance h0^2 [[1, t], [t, 1 + t^2]] after streaming; the kernel adds h^2 I.
    const double h0 = d.bandwidth();
    const double a = h0 * h0 + h * h;
    const double b = h0 * h0 * t;
    const double c = h0 * h0 * (1.0 + t * t) + h * h;
    const double det = a * c - b * b;
    const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(det));
    const double norm3 = norm * norm * norm;
    double total = 0.0;
    for (const auto& s : d.samples()) {
        const Vec3 dv = p.v - s.point.v;
        const Vec3 dr = p.r - (s.point.r + t * s.point.v);
        const double q = (c * dot(dv, dv) - 2.0 * b * dot(dv, dr) + a * dot(dr, dr)) / det;
        total += s.weight * norm3 * std::exp(-0.5 * q);
    }
    return total;
}

OneParticleDensity maxwellian_gaussian(const InitialDataSpec& spec)
{
    spec.validate();
    const double h2 = spec.bandwidth * spec.bandwidth;
    const double sv = std::sqrt(std::max(spec.temperature - h2, 0.0));
    const double sr = std::sqrt(std::max(spec.spatial_width * spec.spatial_width - h2, 0.0));
    const double w = spec.mass / static_cast<double>(spec.components);

    RandomStream rng(spec.seed, {0x1d});
    std::vector<WeightedSample> samples;
    samples.reserve(spec.components);
    if (spec.components % 2 == 1)
        samples.push_back({MacroPoint{}, w});
    // centres come in velocity-mirrored pairs so the density is even in v
    while (samples.size() < spec.components) {
        MacroPoint c;
        for (std::size_t i = 0; i < 3; ++i)
            c.v[i] = sv * rng.normal();
        for (std::size_t i = 0; i < 3; ++i)
            c.r[i] = sr * rng.normal();
        samples.push_back({c, w});
        samples.push_back({MacroPoint{-c.v, c.r}, w});
    }
    return OneParticleDensity(std::move(samples), spec.bandwidth);
}

void QuadratureSpec::validate() const
{
    if (n_samples < 100)
        throw std::invalid_argument("quadrature needs at least 100 samples for a reported statistic");
    if (error_mode == ErrorMode::standard_error && !(target_std_error > 0.0))
        throw std::invalid_argument("standard-error mode needs a positive target_std_error");
    if (max_samples < n_samples)
        throw std::invalid_argument("max_samples must be >= n_samples");
}

namespace {

constexpr std::size_t chunk_size = 512;

struct ChannelMoments
{
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t count = 0;

    void push(double x)
    {
        ++count;
        const double delta = x - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (x - mean);
    }

    void merge(const ChannelMoments& o)
    {
        if (o.count == 0)
            return;
        if (count == 0) {
            *this = o;
            return;
        }
        const double n = static_cast<double>(count + o.count);
        const double delta = o.mean - mean;
        mean += delta * static_cast<double>(o.count) / n;
        m2 += o.m2 + delta * delta * static_cast<double>(count) * static_cast<double>(o.count) / n;
        count += o.count;
    }
};

struct ChunkResult
{
    std::vector<ChannelMoments> channels;
    bool unreliable = false;
};

ChunkResult run_chunk(std::size_t extra_count, std::size_t channels, const MultiIntegrand& integrand,
                      const SampleableDensity& proposal, std::uint64_t seed, std::uint64_t stream,
                      std::size_t chunk, std::size_t count)
{
    ChunkResult result;
    result.channels.resize(channels);
    RandomStream rng(seed, {stream, chunk});
    std::vector<MacroPoint> extra(extra_count);
    std::vector<double> out(channels);
    const double mass = proposal.total_mass();
    for (std::size_t s = 0; s < count; ++s) {
        double pdf = 1.0;
        for (auto& p : extra) {
            p = proposal.sample(rng);
            pdf *= proposal.evaluate(p) / mass;
        }
        std::fill(out.begin(), out.end(), 0.0);
        integrand(extra, out);
        for (std::size_t c = 0; c < channels; ++c) {
            double x = 0.0;
            if (out[c] != 0.0) {
                if (pdf > 0.0)
                    x = out[c] / pdf;
                else
                    result.unreliable = true;
            }
            result.channels[c].push(x);
        }
    }
    return result;
}

} // namespace

std::vector<MCEstimate> mc_integrate_multi(std::size_t extra_count, std::size_t channels, const MultiIntegrand& integrand,
                                           const QuadratureSpec& q, const SampleableDensity& proposal,
                                           std::uint64_t stream)
{
    q.validate();
    std::vector<MCEstimate> estimates(channels);
    if (extra_count == 0) {
        std::vector<double> out(channels, 0.0);
        integrand({}, out);
        for (std::size_t c = 0; c < channels; ++c)
            estimates[c] = {out[c], 0.0, 1, false};
        return estimates;
    }
    if (!(proposal.total_mass() > 0.0))
        throw QuadratureError("Monte Carlo proposal has zero mass");

    std::vector<ChannelMoments> total(channels);
    bool unreliable = false;
    std::size_t done_chunks = 0;
    std::size_t target = q.n_samples;
    for (;;) {
        const std::size_t wanted_chunks = (target + chunk_size - 1) / chunk_size;
        const std::size_t new_chunks = wanted_chunks - done_chunks;
        std::vector<ChunkResult> results(new_chunks);
        parallel_for(new_chunks, [&](std::size_t i) {
            const std::size_t chunk = done_chunks + i;
            const std::size_t begin = chunk * chunk_size;
            const std::size_t count = std::min(chunk_size, target - begin);
            results[i] = run_chunk(extra_count, channels, integrand, proposal, q.seed, stream, chunk, count);
        });
        for (const auto& r : results) {
            unreliable = unreliable || r.unreliable;
            for (std::size_t c = 0; c < channels; ++c)
                total[c].merge(r.channels[c]);
        }
        done_chunks = wanted_chunks;

        bool converged = true;
        if (q.error_mode == ErrorMode::standard_error) {
            for (const auto& m : total) {
                const double n = static_cast<double>(m.count);
                const double se = m.count > 1 ? std::sqrt(m.m2 / (n - 1.0) / n) : 0.0;
                converged = converged && se <= q.target_std_error;
            }
        }
        if (converged || target >= q.max_samples)
            break;
        target = std::min(q.max_samples, 2 * target);
    }

    for (std::size_t c = 0; c < channels; ++c) {
        const auto& m = total[c];
        const double n = static_cast<double>(m.count);
        estimates[c].value = m.mean;
        estimates[c].std_error = m.count > 1 ? std::sqrt(m.m2 / (n - 1.0) / n) : 0.0;
        estimates[c].n_samples = m.count;
        estimates[c].unreliable = unreliable;
    }
    return estimates;
}

MCEstimate mc_integrate(const PhaseFunction& f, std::span<const MacroPoint> fixed, std::size_t extra_count,
                        const QuadratureSpec& q, const SampleableDensity& proposal, std::uint64_t stream)
{
    if (f.arity() != fixed.size() + extra_count)
        throw ArityError("mc_integrate: integrand arity " + std::to_string(f.arity()) + " does not match " +
                         std::to_string(fixed.size()) + " fixed + " + std::to_string(extra_count) + " extra points");
    std::vector<MacroPoint> fixed_copy(fixed.begin(), fixed.end());
    auto integrand = [&f, fixed_copy](std::span<const MacroPoint> extra, std::span<double> out) {
        std::vector<MacroPoint> all(fixed_copy);
        all.insert(all.end(), extra.begin(), extra.end());
        out[0] = f.evaluate_unchecked(all);
    };
    return mc_integrate_multi(extra_count, 1, integrand, q, proposal, stream).front();
}

L1Report l1_norm(const OneParticleDensity& d)
{
    return {d.total_mass(), 0.0, 0, false};
}

L1Report l1_norm(const PhaseFunction& f, const QuadratureSpec& q, const SampleableDensity& proposal,
                 std::uint64_t stream)
{
    auto integrand = [&f](std::span<const MacroPoint> extra, std::span<double> out) {
        out[0] = std::abs(f.evaluate_unchecked(extra));
    };
    const auto e = mc_integrate_multi(f.arity(), 1, integrand, q, proposal, stream).front();
    return {e.value, e.std_error, e.n_samples, e.unreliable};
}

PhaseFunction product_density(std::shared_ptr<const SampleableDensity> d, std::size_t k)
{
    if (!d)
        throw std::invalid_argument("product_density needs a density");
    const double mass = d->total_mass();
    return PhaseFunction(
        k,
        [d = std::move(d)](std::span<const MacroPoint> points) {
            double p = 1.0;
            for (const auto& xi : points)
                p *= d->evaluate(xi);
            return p;
        },
        std::pow(mass, static_cast<double>(k)));
}

PhaseFunction product_density(const OneParticleDensity& d, std::size_t k)
{
    return product_density(std::make_shared<const OneParticleDensity>(d), k);
}

void write_density(std::ostream& out, const OneParticleDensity& d)
{
    const auto old_precision = out.precision(17);
    out << "# h=" << d.bandwidth() << " mass=" << d.total_mass() << '\n';
    for (const auto& s : d.samples()) {
        const auto& p = s.point;
        out << s.weight << ' ' << p.v.x << ' ' << p.v.y << ' ' << p.v.z << ' ' << p.r.x << ' ' << p.r.y << ' '
            << p.r.z << '\n';
    }
    out.precision(old_precision);
}

OneParticleDensity read_density(std::istream& in)
{
    std::string header;
    if (!std::getline(in, header))
        throw std::invalid_argument("density file: missing header line");
    double h = 0.0;
    double mass = 0.0;
    if (std::sscanf(header.c_str(), "# h=%lf mass=%lf", &h, &mass) != 2)
        throw std::invalid_argument("density file: header must read '# h=<bandwidth> mass=<mass>'");

    std::vector<WeightedSample> samples;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::istringstream row(line);
        WeightedSample s;
        auto& p = s.point;
        if (!(row >> s.weight >> p.v.x >> p.v.y >> p.v.z >> p.r.x >> p.r.y >> p.r.z))
            throw std::invalid_argument("density file: malformed row at line " + std::to_string(line_no));
        samples.push_back(s);
    }
    OneParticleDensity d(std::move(samples), h);
    if (std::abs(d.total_mass() - mass) > 1e-12 * std::max(1.0, std::abs(mass)))
        throw std::invalid_argument("density file: header mass does not match the sum of weights");
    return d;
}

} // namespace clusterflow
