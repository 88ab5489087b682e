#include "pasfuse/cli/cli.hpp"

int main(int argc, char** argv) { return pasfuse::cli_main(argc, argv); }
