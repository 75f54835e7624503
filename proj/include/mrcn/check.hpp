#pragma once

#include <stdexcept>
#include <string>

namespace mrcn {

// Violated operation precondition / domain invariant.
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Bad run/network configuration (CLI flags, config files, checkpoints).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failure or malformed on-disk artifact.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted (non-finite loss etc.); carries a diagnostic dump.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mrcn

#define MRCN_CHECK(cond, msg)                        \
  do {                                               \
    if (!(cond)) throw ::mrcn::ContractViolation(msg); \
  } while (0)

#define MRCN_CONFIG_CHECK(cond, msg)            \
  do {                                          \
    if (!(cond)) throw ::mrcn::ConfigError(msg); \
  } while (0)
