#pragma once

#include <exception>

namespace unisurf::cli {

/// 0 success, 2 config error, 3 data error, 4 numerical abort, 1 otherwise.
int exit_code_for(const std::exception& e);

int run(int argc, char** argv);

}  // namespace unisurf::cli
