#include "sysrisk/cli.hpp"

int main(int argc, char** argv) { return sysrisk::cli_main(argc, argv); }
