#include "udlflow/cli/cli.hpp"

int main(int argc, char** argv) { return udlflow::cli::run(argc, argv); }
