#pragma once

#include <stdexcept>
#include <string>

namespace dyadfuse {

/// Process exit codes shared by the CLI and anything that maps errors to them.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  io = 3,
  shape = 4,
  numerical = 5,
};

/// Base of every library error. Carries the exit code the CLI should use.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

#define DYADFUSE_DECLARE_ERROR(Name, Code)                              \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(what, Code) {}       \
  };

DYADFUSE_DECLARE_ERROR(InputShapeError, ExitCode::shape)
DYADFUSE_DECLARE_ERROR(ParseError, ExitCode::shape)
DYADFUSE_DECLARE_ERROR(EmptyInputError, ExitCode::shape)
DYADFUSE_DECLARE_ERROR(InsufficientDataError, ExitCode::shape)
DYADFUSE_DECLARE_ERROR(IndexError, ExitCode::shape)
DYADFUSE_DECLARE_ERROR(ConfigError, ExitCode::usage)
DYADFUSE_DECLARE_ERROR(NumericalError, ExitCode::numerical)
DYADFUSE_DECLARE_ERROR(UndefinedMetricError, ExitCode::numerical)
DYADFUSE_DECLARE_ERROR(IoError, ExitCode::io)

#undef DYADFUSE_DECLARE_ERROR

/// A segment too short for CCA. Carries the offending segment index when known.
class DegenerateSegmentError : public Error {
 public:
  explicit DegenerateSegmentError(const std::string& what, long segment = -1)
      : Error(what, ExitCode::shape), segment_(segment) {}
  long segment() const noexcept { return segment_; }

 private:
  long segment_;
};

std::string describe(ExitCode code);

}  // namespace dyadfuse
