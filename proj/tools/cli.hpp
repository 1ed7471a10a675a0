#pragma once

#include <ostream>

namespace mlcc::cli {

/// Entry point of the `mlcc` tool. Returns the process exit code: 0 on
/// success, 1 on a runtime failure, 2 on a usage or config error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlcc::cli
