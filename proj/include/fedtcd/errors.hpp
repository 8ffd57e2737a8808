#pragma once

#include <stdexcept>
#include <string>

namespace fedtcd {

// Invalid configuration or violated precondition on user-supplied input.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Divergence, singular systems, NaN/Inf during a computation.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedtcd
