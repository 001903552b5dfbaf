// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace moco {

// Command-line front end. `args` excludes the program name; `out` receives
// the single summary line (or the requested report), `err` everything else.
// Exit codes: 0 success, 2 validation, 3 estimation, 4 I/O, 1 unexpected.
int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

// Complete default configuration, printable via `config --print-defaults`;
// every run starts from this text and overlays the user's file.
std::string default_config_text();

inline constexpr const char* kMocoVersion = "0.1.0";

}  // namespace moco
