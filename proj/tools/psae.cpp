// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/cli.hpp"

int main(int argc, char** argv) { return psae::cli::run(argc, argv); }
