#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rbstein {

// Numerical failures map to CLI exit code 1, usage errors to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ShapeError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NonFiniteDynamics : public NumericalError {
public:
    NonFiniteDynamics(int stage)
        : NumericalError("non-finite derivative in RK4 stage " + std::to_string(stage)), stage_(stage) {}
    int stage() const { return stage_; }

private:
    int stage_;
};

class SimulationDiverged : public NumericalError {
public:
    explicit SimulationDiverged(std::size_t step)
        : NumericalError("simulation diverged at step " + std::to_string(step)), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

class FilterDiverged : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InnovationSingular : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class JacobianError : public NumericalError {
public:
    explicit JacobianError(int coordinate)
        : NumericalError("non-finite Jacobian column " + std::to_string(coordinate)), coordinate_(coordinate) {}
    int coordinate() const { return coordinate_; }

private:
    int coordinate_;
};

class WeightCollapse : public NumericalError {
public:
    explicit WeightCollapse(double max_log_weight)
        : NumericalError("all particle weights collapsed (max raw log-weight " + std::to_string(max_log_weight) + ")"),
          max_log_weight_(max_log_weight) {}
    double max_log_weight() const { return max_log_weight_; }

private:
    double max_log_weight_;
};

class GradientUnavailable : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ParticleDiverged : public NumericalError {
public:
    explicit ParticleDiverged(int iteration)
        : NumericalError("non-finite particle after SVGD iteration " + std::to_string(iteration)), iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

class PreconditionerSingular : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class BeliefInvalid : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace rbstein
