// SPDX-License-Identifier: Apache-2.0
#include "attnguard/cli.hpp"

int main(int argc, char** argv) { return attnguard::cli_main(argc, argv); }
