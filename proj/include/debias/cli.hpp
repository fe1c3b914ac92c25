#pragma once

#include <ostream>

namespace debias {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

// Entry point for the `debias` tool: calibrate, correct, estimate, simulate,
// report. Progress and defaulted parameters go to `out`, errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace debias
