#include "unisurf/cli.hpp"

int main(int argc, char** argv) { return unisurf::cli::run(argc, argv); }
