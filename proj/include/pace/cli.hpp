#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pace::cli {

/// Runs one subcommand. Returns 0 on success, 1 on runtime failure (one-line
/// diagnostic on `err`) and 2 on bad usage.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pace::cli
