// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace crosskd::csv {

/// Shortest round-trippable text for a double ("%.17g").
std::string num(double v);

/// Splits one CSV line on commas; no quoting support.
std::vector<std::string> split(const std::string& line);

/// Lines of `text` without trailing '\r', skipping blank lines and lines
/// starting with '#'.
std::vector<std::string> data_lines(const std::string& text);

double to_double(const std::string& field);
int to_int(const std::string& field);

}  // namespace crosskd::csv
