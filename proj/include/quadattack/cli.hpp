#pragma once

#include <ostream>

namespace quadattack {

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 success, 1 runtime failure or failed selftest, 2 bad
/// configuration or arguments, 3 I/O error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace quadattack
