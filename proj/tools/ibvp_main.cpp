#include "ibvp/cli.hpp"

int main(int argc, char** argv) { return ibvp::cli::main(argc, argv); }
