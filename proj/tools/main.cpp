#include "cli.hpp"

int main(int argc, char** argv) { return mwpkd::cli::run_command(argc, argv); }
