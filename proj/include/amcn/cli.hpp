#pragma once

#include <iosfwd>

namespace amcn {

// Subcommands: synth, train, eval, detect, gradcheck.
// Returns 0 on success, 2 on usage errors (including missing input files),
// 1 on validation or runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace amcn
