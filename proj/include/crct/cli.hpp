#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crct {

// full command-line driver; args excludes the program name.
// exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crct
