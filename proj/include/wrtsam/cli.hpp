#pragma once

#include <iosfwd>

namespace wrtsam::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Entry point of the `wrtsam` tool. Writes human-readable progress to
/// `out` and diagnostics to `err`; returns an ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wrtsam::cli
