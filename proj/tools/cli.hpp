#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace l2sa::cli {

// Process exit codes. Every failure maps to exactly one category.
enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,  // the command ran but its check or training failed
  kUsage = 2,        // bad flags, unknown names, malformed config file
  kIo = 3,           // unreadable or missing files
  kFormat = 4,       // corrupt checkpoint or manifest
  kNumeric = 5,      // non-finite values
  kShape = 6,        // model/data shape mismatch
  kInternal = 70,
};

// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace l2sa::cli
