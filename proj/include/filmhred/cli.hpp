// SPDX-License-Identifier: Apache-2.0
//
// film-hred {train|ablate|generate|score|demo|synth}
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or file
// format error, 3 numeric or shape failure.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fh::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace fh::cli
