#include "inlamh/cli.hpp"

int main(int argc, char** argv) { return inlamh::cli_main(argc, argv); }
