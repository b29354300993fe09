#pragma once

#include <iosfwd>

namespace diffro {

// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid config.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace diffro
