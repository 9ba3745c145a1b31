#include "sami/cli.hpp"

int main(int argc, char** argv) { return sami::run_cli(argc, argv); }
