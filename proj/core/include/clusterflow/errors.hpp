#pragma once

#include <stdexcept>
#include <string>

namespace clusterflow {

/// Requested flow needs more integrator steps than FlowConfig::max_steps allows.
class StepBudgetError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// A phase function was applied to a point list of the wrong length.
class ArityError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Expansion order or set size above the supported cap.
class OrderCapError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Monte Carlo estimate cannot be formed (zero-mass proposal, too few samples, ...).
class QuadratureError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Two reports that must describe the same setup do not.
class ConfigMismatchError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace clusterflow
