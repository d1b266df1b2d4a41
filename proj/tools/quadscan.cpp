#include <iostream>

#include "quadscan/cli.hpp"

int main(int argc, char** argv) { return quadscan::cli::run(argc, argv, std::cout, std::cerr); }
