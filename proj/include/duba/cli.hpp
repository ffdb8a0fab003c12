#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace duba::cli {

enum ExitCode : int {
    kOk = 0,
    kUsageError = 2,
    kProcessingError = 3,
    kVerificationFailed = 4,
    kManifestMissing = 5,
};

// Entry point of the `duba` tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace duba::cli
