#pragma once

#include <ostream>

namespace emo {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitIo = 2,
  kExitMissingArtifact = 3,
  kExitConfigMismatch = 4,
  kExitBadArgument = 5,
  kExitGradcheckFailed = 10,
};

/// Entry point of the `emoavatar` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace emo
