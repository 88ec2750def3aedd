#pragma once

#include <string>
#include <vector>

namespace stitch {

// Entry point shared by the `stitch` binary and the test harness.
// Exit codes: 0 success, 1 usage/configuration error, 2 runtime error.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

} // namespace stitch
