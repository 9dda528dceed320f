#pragma once

#include <stdexcept>
#include <string>

namespace fishmech {

/// Failure categories map onto CLI exit codes (see tools/fishmech.cpp).
enum class ErrorKind {
  input,          // malformed or out-of-contract argument
  domain,         // value outside the mathematical domain of an operation
  normalization,  // trace-normalized input that is not normalized
  singularity,    // inverse of a singular matrix requested without a ridge
  degenerate,     // degenerate Fisher (non-positive diagonal entries)
  calibration,    // privacy calibration target unreachable
  config,         // configuration file or flag error
  parse,          // malformed matrix / data file
  io,             // file system failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FISHMECH_DEFINE_ERROR(Name, Kind)              \
  class Name : public Error {                          \
   public:                                             \
    explicit Name(const std::string& what)             \
        : Error(ErrorKind::Kind, what) {}              \
  };

FISHMECH_DEFINE_ERROR(InputError, input)
FISHMECH_DEFINE_ERROR(DomainError, domain)
FISHMECH_DEFINE_ERROR(NormalizationError, normalization)
FISHMECH_DEFINE_ERROR(SingularityError, singularity)
FISHMECH_DEFINE_ERROR(DegenerateFisherError, degenerate)
FISHMECH_DEFINE_ERROR(CalibrationError, calibration)
FISHMECH_DEFINE_ERROR(ConfigError, config)
FISHMECH_DEFINE_ERROR(IoError, io)

#undef FISHMECH_DEFINE_ERROR

/// Parse failure in a data file; carries the byte offset of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::parse,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace fishmech
