#pragma once

#include <stdexcept>
#include <string>

namespace ns {

// Base class for all library errors; each subclass maps to a stable CLI exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    DimensionError(int expected, int actual)
        : Error("dimension mismatch: expected P=" + std::to_string(expected) +
                ", got P=" + std::to_string(actual)),
          expected(expected), actual(actual) {}
    int expected;
    int actual;
};

struct FactorizationError : Error {
    explicit FactorizationError(double final_jitter)
        : Error("matrix not positive definite after jitter " + std::to_string(final_jitter)),
          final_jitter(final_jitter) {}
    double final_jitter;
};

struct DegenerateInputError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct NumericalError : Error {
    NumericalError(const std::string& what, long point_index)
        : Error(what + " (point index " + std::to_string(point_index) + ")"),
          point_index(point_index) {}
    long point_index;
};

struct DataError : Error {
    using Error::Error;
};

struct MetricError : Error {
    using Error::Error;
};

struct ResourceError : Error {
    using Error::Error;
};

} // namespace ns
