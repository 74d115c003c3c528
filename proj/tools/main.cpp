#include "localsa/cli.hpp"

int main(int argc, char** argv) { return localsa::cli_main(argc, argv); }
