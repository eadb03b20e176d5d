#include "hse/cli.hpp"

int main(int argc, char** argv) { return hse::cli_main(argc, argv); }
