#include "hacd/cli.hpp"

int main(int argc, char** argv) { return hacd::cli::run_cli(argc, argv); }
