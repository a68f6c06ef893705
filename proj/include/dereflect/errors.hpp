#pragma once

#include <stdexcept>
#include <string>

namespace dereflect {

// Bad input values or configuration. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Tensor/image shapes that do not agree.
class DimensionError : public ValidationError {
public:
    explicit DimensionError(const std::string& what) : ValidationError(what) {}
};

class InsufficientFeaturesError : public std::runtime_error {
public:
    explicit InsufficientFeaturesError(const std::string& what) : std::runtime_error(what) {}
};

class AlignmentFailure : public std::runtime_error {
public:
    explicit AlignmentFailure(const std::string& what) : std::runtime_error(what) {}
};

// A frozen parameter partition changed during training. Never recoverable.
class InvariantViolation : public std::logic_error {
public:
    explicit InvariantViolation(const std::string& what) : std::logic_error(what) {}
};

} // namespace dereflect
