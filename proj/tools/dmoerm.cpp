// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/cli.hpp"

int main(int argc, char** argv) { return dmoerm::cli_main(argc, argv); }
