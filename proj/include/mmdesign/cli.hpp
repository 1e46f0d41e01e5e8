#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmdesign::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Runs one command line (args[0] is the program name) and returns its exit code.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace mmdesign::cli
