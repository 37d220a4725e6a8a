// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 2;

/// Runs `ens-scaling` with `args` (without the program name). JSON results
/// go to `out`, diagnostics and structured errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ens::cli
