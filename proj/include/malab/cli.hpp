#pragma once

#include <string>
#include <vector>

namespace malab {

/// Entry point of the `malab` executable. `args` excludes the program
/// name. Returns 0 on success, 1 for usage or configuration errors and 2
/// for runtime failures.
int run_cli(const std::vector<std::string>& args);

}  // namespace malab
