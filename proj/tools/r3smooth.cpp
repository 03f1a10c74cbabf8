#include "r3/cli.hpp"

int main(int argc, char** argv) { return r3::cli::run_cli(argc, argv); }
