#pragma once

#include <iosfwd>

namespace pss::cli {

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericalError = 4,
};

// Entry point for the `pss` executable. Output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pss::cli
