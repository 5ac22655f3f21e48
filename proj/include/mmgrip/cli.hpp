#pragma once

#include <iostream>

namespace mmgrip {

// Entry point of the `mmgrip` executable. Exit codes: 0 success, 1 runtime
// failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace mmgrip
