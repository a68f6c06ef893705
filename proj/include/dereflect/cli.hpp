#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dereflect::cli {

// Exit codes: 0 success, 1 validation error or bad usage, 2 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point of the `dereflect` tool; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace dereflect::cli
