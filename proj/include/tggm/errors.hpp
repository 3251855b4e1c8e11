#ifndef TGGM_ERRORS_HPP
#define TGGM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tggm {

// Error taxonomy shared across the library. Everything derives from
// std::runtime_error so callers can catch coarsely or precisely.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct HeadMismatchError : std::runtime_error {
  explicit HeadMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StructureError : std::runtime_error {
  explicit StructureError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IngestError : std::runtime_error {
  explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AccuracyError : std::runtime_error {
  explicit AccuracyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tggm

#endif
