#pragma once

namespace deeplight {

// Entry point for the `deeplight` binary. Returns 0 on success, 1 on a
// usage error, 2 on a runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace deeplight
