#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sarssl::cli {

// Runs one command; `args` excludes the program name. Returns the process
// exit status: 0 success, 1 failure (one JSON error line on `err`), 2 usage.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string usage();

}  // namespace sarssl::cli
