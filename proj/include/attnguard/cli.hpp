// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace attnguard {

// Full command-line entry point, callable in-process. Returns the exit code:
// 0 success, 1 domain error, 2 usage error.
int cli_main(int argc, const char* const* argv);

} // namespace attnguard
