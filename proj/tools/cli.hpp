#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sfn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitUsage = 64;

/// Runs one subcommand (gen, train, eval, cv, gradcheck, trace). argv[0] is
/// the program name.
int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace sfn::cli
