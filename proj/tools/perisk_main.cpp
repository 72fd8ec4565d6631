#include "perisk/cli.hpp"

int main(int argc, char** argv) { return perisk::cli::run_cli(argc, argv); }
