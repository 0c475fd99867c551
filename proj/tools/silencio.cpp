#include "silencio/cli.hpp"

int main(int argc, char** argv) { return silencio::cli::run_cli(argc, argv); }
