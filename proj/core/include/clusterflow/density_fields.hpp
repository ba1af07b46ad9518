#pragma once

// One-particle densities as weighted Gaussian-kernel mixtures on R^3 x R^3,
// product densities, and Monte Carlo quadrature over macroscopic variables.

#include <clusterflow/dynamics.hpp>
#include <clusterflow/flow_operators.hpp>
#include <clusterflow/random.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace clusterflow {

/// Normalized product Gaussian kernel on R^6 with width h in every coordinate.
double gaussian_kernel(const MacroPoint& d, double h);
/// Kernel of the difference a - b.
double gaussian_kernel(const MacroPoint& a, const MacroPoint& b, double h);

/// Anything Monte Carlo can draw from and weigh against.
class SampleableDensity
{
public:
    virtual ~SampleableDensity() = default;
    virtual double evaluate(const MacroPoint& xi) const = 0;
    virtual MacroPoint sample(RandomStream& rng) const = 0;
    virtual double total_mass() const = 0;
};

struct WeightedSample
{
    MacroPoint point;
    double weight = 0.0;
};

/// Finite mixture sum_j w_j K_h(xi - xi_j).
class OneParticleDensity final : public SampleableDensity
{
public:
    OneParticleDensity() = default;
    OneParticleDensity(std::vector<WeightedSample> samples, double bandwidth);

    std::span<const WeightedSample> samples() const { return samples_; }
    double bandwidth() const { return bandwidth_; }
    double total_mass() const override { return total_mass_; }

    double evaluate(const MacroPoint& xi) const override;
    /// Draws from the normalized mixture. Throws QuadratureError on zero mass.
    MacroPoint sample(RandomStream& rng) const override;
    /// Draws a mixture centre only (no kernel jitter).
    const MacroPoint& sample_centre(RandomStream& rng) const;

    OneParticleDensity scaled(double factor) const;
    OneParticleDensity with_bandwidth(double bandwidth) const;
    OneParticleDensity with_mass(double mass) const;

private:
    std::vector<WeightedSample> samples_;
    std::vector<double> cumulative_;
    double bandwidth_ = 0.2;
    double total_mass_ = 0.0;
};

/// A density carried along free streaming for time s: evaluates base(v, r - s v)
/// and samples base then streams. Free streaming preserves Lebesgue measure, so
/// this is the exact pushforward.
class StreamedDensity final : public SampleableDensity
{
public:
    StreamedDensity(std::shared_ptr<const SampleableDensity> base, double time);

    double evaluate(const MacroPoint& xi) const override;
    MacroPoint sample(RandomStream& rng) const override;
    double total_mass() const override { return base_->total_mass(); }
    double time() const { return time_; }

private:
    std::shared_ptr<const SampleableDensity> base_;
    double time_;
};

/// int K_h(p - xi) d(v, r - t v) dxi: the mixture carried by free streaming for
/// time t and smoothed by the observation kernel of width h, in closed form.
double mollified_free_transport(const OneParticleDensity& d, double t, double h, const MacroPoint& p);

/// Maxwellian in v times Gaussian in r, realized as a kernel mixture whose
/// centres are drawn so that the overall per-coordinate variances equal
/// `temperature` and `spatial_width^2`.
struct InitialDataSpec
{
    double temperature = 1.0;
    double spatial_width = 1.0;
    double mass = 1.0;
    std::size_t components = 32;
    double bandwidth = 0.2;
    std::uint64_t seed = 1;

    void validate() const;
};

OneParticleDensity maxwellian_gaussian(const InitialDataSpec& spec);

enum class ErrorMode { standard_error, fixed_budget };

struct QuadratureSpec
{
    std::size_t n_samples = 10'000;
    /// Null means "the density being integrated against".
    std::shared_ptr<const SampleableDensity> proposal;
    std::uint64_t seed = 12345;
    ErrorMode error_mode = ErrorMode::fixed_budget;
    /// standard-error mode keeps doubling the sample count until every output
    /// reaches this absolute standard error or max_samples is hit.
    double target_std_error = 0.0;
    std::size_t max_samples = 1'000'000;

    void validate() const;
};

struct MCEstimate
{
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
    /// Set when a sampled point had zero proposal density but a nonzero integrand.
    bool unreliable = false;
};

struct L1Report
{
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
    bool unreliable = false;
};

/// Integrand callback for the vector Monte Carlo engine: receives the sampled
/// extra points and writes one raw integrand value per output channel.
using MultiIntegrand = std::function<void(std::span<const MacroPoint> extra, std::span<double> out)>;

/// Importance-sampled estimates of int prod_{i<m} dxi_i F_c(xi) for every
/// channel c, with xi_i drawn i.i.d. from the normalized proposal. All channels
/// share the same samples. `stream` separates independent estimates made with
/// the same seed. Deterministic given (q.seed, stream).
std::vector<MCEstimate> mc_integrate_multi(std::size_t extra_count, std::size_t channels, const MultiIntegrand& integrand,
                                           const QuadratureSpec& q, const SampleableDensity& proposal,
                                           std::uint64_t stream = 0);

/// int dxi_{k+1..k+m} f(fixed, xi_{k+1..k+m}).
MCEstimate mc_integrate(const PhaseFunction& f, std::span<const MacroPoint> fixed, std::size_t extra_count,
                        const QuadratureSpec& q, const SampleableDensity& proposal, std::uint64_t stream = 0);

/// Analytic shortcut: a nonnegative mixture integrates to its total mass.
L1Report l1_norm(const OneParticleDensity& d);
/// int |f| over all arguments, sampled from the proposal product.
L1Report l1_norm(const PhaseFunction& f, const QuadratureSpec& q, const SampleableDensity& proposal,
                 std::uint64_t stream = 0);

/// prod_{i=1}^k d(xi_i).
PhaseFunction product_density(std::shared_ptr<const SampleableDensity> d, std::size_t k);
PhaseFunction product_density(const OneParticleDensity& d, std::size_t k);

/// Columnar text: "# h=<bandwidth> mass=<total>" then rows "w vx vy vz rx ry rz".
void write_density(std::ostream& out, const OneParticleDensity& d);
OneParticleDensity read_density(std::istream& in);

} // namespace clusterflow
