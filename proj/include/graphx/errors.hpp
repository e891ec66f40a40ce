#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace graphx {

class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data or a violated domain invariant.
class ValidationError : public Error {
   public:
    using Error::Error;
};

/// Incompatible tensor / matrix shapes.
class DimensionError : public Error {
   public:
    using Error::Error;
};

/// Invalid configuration value (thresholds, ratios, unknown kinds).
class ConfigError : public Error {
   public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
   public:
    using Error::Error;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

}  // namespace graphx
