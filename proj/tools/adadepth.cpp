#include "adadepth/cli/commands.hpp"

int main(int argc, char** argv) { return adadepth::cli::run_command(argc, argv); }
