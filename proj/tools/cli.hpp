// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace canfota::cli {

enum ExitStatus : int { kOk = 0, kFailed = 1, kUsage = 2 };

/// Runs one `fota` invocation. `args` excludes the program name. Machine
/// output (JSON) goes to `out`, human summaries and errors to `err`.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_run(int argc, const char* const* argv);

}  // namespace canfota::cli
