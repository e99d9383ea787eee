#include "dyadfuse/errors.hpp"

namespace dyadfuse {

std::string describe(ExitCode code) {
  switch (code) {
    case ExitCode::ok: return "ok";
    case ExitCode::usage: return "usage";
    case ExitCode::io: return "io";
    case ExitCode::shape: return "shape";
    case ExitCode::numerical: return "numerical";
  }
  return "unknown";
}

}  // namespace dyadfuse
