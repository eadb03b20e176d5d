#pragma once

namespace hse {

// Entry point behind the `hse` binary; returns the process exit code
// (0 ok, 1 usage, 2 data error, 3 numeric error).
int cli_main(int argc, const char* const* argv);

}  // namespace hse
