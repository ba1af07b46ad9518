#pragma once

#include <cstdint>
#include <cstring>
#include <unordered_map>
#include <utility>
#include <vector>

namespace clusterflow {

/// Sum of integer-weighted doubles in which bit-identical values are merged
/// before any floating-point work. Structural cancellations (all flows equal,
/// t = 0, free particles) therefore come out as exact zeros.
class IntegerWeightedSum
{
public:
    void add(std::int64_t coefficient, double value)
    {
        if (coefficient == 0)
            return;
        std::uint64_t bits;
        std::memcpy(&bits, &value, sizeof bits);
        if (index_.empty()) {
            for (auto& term : terms_) {
                if (term.bits == bits) {
                    term.coefficient += coefficient;
                    return;
                }
            }
            terms_.push_back({bits, value, coefficient});
            if (terms_.size() > linear_limit)
                for (std::size_t i = 0; i < terms_.size(); ++i)
                    index_.emplace(terms_[i].bits, i);
            return;
        }
        auto [it, inserted] = index_.emplace(bits, terms_.size());
        if (inserted)
            terms_.push_back({bits, value, coefficient});
        else
            terms_[it->second].coefficient += coefficient;
    }

    double total() const
    {
        double sum = 0.0;
        for (const auto& term : terms_)
            if (term.coefficient != 0)
                sum += static_cast<double>(term.coefficient) * term.value;
        return sum;
    }

    void clear()
    {
        terms_.clear();
        index_.clear();
    }
    std::size_t distinct() const { return terms_.size(); }

private:
    struct Term
    {
        std::uint64_t bits;
        double value;
        std::int64_t coefficient;
    };
    static constexpr std::size_t linear_limit = 24;
    std::vector<Term> terms_; // insertion order fixes the summation order
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

} // namespace clusterflow
