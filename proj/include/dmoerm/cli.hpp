// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver behind the `dmoerm` tool. Kept in the library so
// tests can exercise dispatch in-process.
//
// Exit codes: 0 success (including --help/--version), 2 usage error
// (unknown flag or subcommand, missing required flag), 3 configuration
// error (bad values in flags or config file), 1 any other failure.

#pragma once

namespace dmoerm {

int cli_main(int argc, const char* const* argv);

}  // namespace dmoerm
