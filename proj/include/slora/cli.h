// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Exit codes: 0 success, 1 numeric or validation
// failure, 2 usage error.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace slora {

inline constexpr const char* kVersion = "0.1.0";

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slora
