#include "cli.hpp"

int main(int argc, char** argv) { return poisson_cp::cli::run_cli(argc, argv); }
