#pragma once

#include <ostream>

namespace conefluct {

/// Entry point of the `conefluct` tool. Returns 0 on success, 1 when a
/// hypothesis check or a validation verdict fails, 2 on usage or runtime errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace conefluct
