#pragma once

#include <ostream>

namespace eos::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitInternal = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitDivergence = 4,
    kExitVerification = 5,
};

// Entry point for the eos command: gen-dice, train, analyze, fit-powerlaw, plot, verify.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace eos::cli
