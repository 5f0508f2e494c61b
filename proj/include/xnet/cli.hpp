#pragma once

#include <ostream>

namespace xnet {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Subcommands: train | eval | decode | layer-stats | gen-data | grad-check.
// Machine-readable output (JSON lines) goes to `out`, logs and tables to `err`.
// Any `--section.key=value` (or `--section.key value`) argument overrides the
// corresponding config entry after --config/--preset are applied.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xnet
