#pragma once

#include <stdexcept>
#include <string>

namespace bnnprior {

/// Failure classes, mapped one-to-one onto CLI exit codes.
enum class ErrorKind {
  InvalidInput,  // dimension mismatch, out-of-range argument
  Config,        // bad configuration value
  Format,        // unparseable or malformed file
  Io,            // filesystem failure
  Numerical,     // non-finite value where one is impossible
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct InvalidInput : Error {
  explicit InvalidInput(const std::string& w) : Error(ErrorKind::InvalidInput, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::Format, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::Numerical, w) {}
};

// 0 success, 1 usage/config, 2 data/format, 3 numerical.
inline int exitCodeFor(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return 1;
    case ErrorKind::InvalidInput:
    case ErrorKind::Format:
    case ErrorKind::Io: return 2;
    case ErrorKind::Numerical: return 3;
  }
  return 3;
}

}  // namespace bnnprior
