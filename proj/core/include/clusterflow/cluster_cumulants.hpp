#pragma once

// Set-partition combinatorics and cumulants of cluster evolution operators.
//
// A cumulant acts on a ground set {{Y}, s_1, ..., s_n} in which the cluster
// element {Y} stands for a group of particles that always moves together. For
// a partition P of the ground set the cumulant contributes
//     (-1)^{|P|-1} (|P|-1)!  prod_{blocks B}  U_B
// where U_B is the evolution (or scattering) operator of the particles in B.
// Operators on disjoint blocks commute, so the product acts by moving every
// block along its own flow.

#include <clusterflow/density_fields.hpp>
#include <clusterflow/flow_operators.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace clusterflow {

/// Largest ground set accepted by the partition enumerator (Bell(10) = 115975).
inline constexpr std::size_t max_partition_set = 10;
/// Largest expansion order accepted by the V operators and series.
inline constexpr std::size_t max_expansion_order = 4;

/// Particle indices (0-based positions in the argument list) of a cumulant's
/// ground set. `cluster` is the atomic element {Y}; `singles` follow it.
struct ClusterIndexSet
{
    std::vector<std::size_t> cluster;
    std::vector<std::size_t> singles;

    /// Cluster {0..k-1} with singles {k..k+n-1}.
    static ClusterIndexSet standard(std::size_t k, std::size_t n);

    std::size_t element_count() const { return 1 + singles.size(); }
    std::size_t particle_count() const { return cluster.size() + singles.size(); }
    /// Throws std::invalid_argument on an empty cluster or repeated index.
    void validate() const;
};

/// Partition of the ground elements {0, ..., m-1}; element 0 is the cluster.
struct SetPartition
{
    std::vector<std::vector<std::size_t>> blocks;
};

struct CumulantTerm
{
    SetPartition partition;
    std::int64_t coefficient = 0;
};

/// (-1)^{b-1} (b-1)! in integer arithmetic.
std::int64_t cumulant_coefficient(std::size_t block_count);

/// Every partition of an m-element set exactly once, in restricted-growth order.
/// Throws OrderCapError for m > max_partition_set.
std::vector<SetPartition> enumerate_partitions(std::size_t m);
std::vector<SetPartition> enumerate_partitions(const ClusterIndexSet& ground);

/// Cached partitions of an m-set with their coefficients.
const std::vector<CumulantTerm>& cumulant_terms(std::size_t m);

/// Sum of the signed coefficients over all partitions of an m-set.
std::int64_t partition_identity_sum(std::size_t m);

std::uint64_t bell_number(std::size_t m);

enum class ClusterFlow
{
    evolution, ///< S_|B|(-t) on each block
    scattering ///< scattering operator at t on each block
};

/// Moves points block by block for one partition of `ground`.
void apply_partition_flow(const OperatorContext& ctx, ClusterFlow kind, double t, const ClusterIndexSet& ground,
                          const SetPartition& partition, std::span<MacroPoint> points);

/// (1+n)-th order cumulant of S(-t) on the ground set, applied to f at points.
double apply_cumulant(const OperatorContext& ctx, double t, const ClusterIndexSet& ground, const PhaseFunction& f,
                      std::span<const MacroPoint> points);

/// Same with scattering operators in place of S(-t).
double apply_scattering_cumulant(const OperatorContext& ctx, double t, const ClusterIndexSet& ground,
                                 const PhaseFunction& f, std::span<const MacroPoint> points);

/// One scattering-cumulant factor in a V-operator word.
struct CumulantFactor
{
    ClusterIndexSet ground;
};

/// Integer-weighted composition of cumulant factors. Factors apply left to
/// right: (A B f)(xi) = f(b(a(xi))), so the first factor moves the points first.
struct OperatorWord
{
    std::int64_t coefficient = 0;
    std::vector<CumulantFactor> factors;
};

struct OperatorExpansion
{
    std::size_t cluster_size = 0;
    std::size_t order = 0;
    bool renormalized = false;
    std::vector<OperatorWord> words;
};

/// Expands V_{1+n}(t, {Y}, k+1, ..., k+n) into words of scattering cumulants by
/// running the nested sums over r, m_1..m_r and the non-increasing chains
/// r^j_1 = m_j >= r^j_2 >= ... >= 0 literally. The renormalized variant hands the
/// chunks of every group to the k cluster particles only.
OperatorExpansion expand_V(std::size_t k, std::size_t n, bool renormalized);

/// Pointwise value of an expansion applied to f at k + n points.
double evaluate_expansion(const OperatorContext& ctx, double t, const OperatorExpansion& expansion,
                          const PhaseFunction& f, std::span<const MacroPoint> points);

/// Pointwise V_{1+n}(t) f at k + n points (no integration).
double evaluate_V(const OperatorContext& ctx, double t, std::size_t n, std::size_t k, const PhaseFunction& f,
                  std::span<const MacroPoint> points, bool renormalized = false);

/// The hand-expanded second-order form
///   S^_{k+1}(Y, k+1) - S^_k(Y) sum_{j<=k} S^_2(j, k+1) + (k-1) S^_k(Y)
/// evaluated term by term through scatter_points.
double evaluate_V2_explicit(const OperatorContext& ctx, double t, std::size_t k, const PhaseFunction& f,
                            std::span<const MacroPoint> points);

struct ExpansionOrderConfig
{
    std::size_t n_max = 3;
    bool renormalized = false;

    void validate() const;
};

/// int dxi_{k+1..k+n} (V_{1+n}(t) f)(xi_1..xi_{k+n}) with xi_1..xi_k = points.
/// Order 0 needs no quadrature.
MCEstimate apply_V(const OperatorContext& ctx, double t, std::size_t n, std::size_t k, const PhaseFunction& f,
                   std::span<const MacroPoint> points, const QuadratureSpec& q, const SampleableDensity& proposal,
                   std::uint64_t stream = 0);

MCEstimate apply_V_renormalized(const OperatorContext& ctx, double t, std::size_t n, std::size_t k,
                                const PhaseFunction& f, std::span<const MacroPoint> points, const QuadratureSpec& q,
                                const SampleableDensity& proposal, std::uint64_t stream = 0);

struct GeneratorReport
{
    std::size_t order = 0;
    double t = 0.0;
    /// (1/t)(V_1 - I) f for order 0, (1/t) V_{1+n} f otherwise, at t.
    double raw = 0.0;
    /// First-order Richardson extrapolation 2 D(t/2) - D(t) of the raw quotient.
    double estimate = 0.0;
    /// Poisson bracket for order 0, zero otherwise.
    double reference = 0.0;
};

/// Poisson-bracket generator sum_{i != j} <grad Phi(r_i - r_j), d/dv_i> f, with
/// velocity derivatives from fourth-order central differences.
double poisson_bracket(const PotentialSpec& potential, const PhaseFunction& f, std::span<const MacroPoint> points,
                       double dv = 1e-3);

/// Small-t limit of V_{1+n}: points holds k + n configurations.
GeneratorReport generator_check(const OperatorContext& ctx, std::size_t n, std::size_t k, const PhaseFunction& f,
                                std::span<const MacroPoint> points, double t = 1e-3);

} // namespace clusterflow
