#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prag {

// Subcommand dispatcher behind the `prag` binary:
//   prag <ingest|embed|train|retrieve|explain|evaluate|agreement|synth>
//        --config <path> [--seed N] [--out <dir>] [...]
// Returns the process exit code: 0 success, 1 runtime failure, 2 missing
// artifact, 3 validation failure. Failures print one JSON error object to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prag
