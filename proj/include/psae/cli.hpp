// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace psae::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 runtime/module error, 2 usage error.
int run(int argc, const char* const* argv);

}  // namespace psae::cli
