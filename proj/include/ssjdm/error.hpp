#pragma once

#include <stdexcept>
#include <string>

namespace ssjdm {

/// Invalid configuration, argument, or shape. CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf state, divergence, or an otherwise failed numerical stage. CLI exit code 3.
class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, std::string const &what)
{
  if (!cond) { throw ConfigError(what); }
}

} // namespace ssjdm
