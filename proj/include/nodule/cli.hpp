#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nodule::cli {

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 2 on a usage error (usage text on `err`), 1 on any other failure
/// (one `error: ...` line on `err`).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nodule::cli
