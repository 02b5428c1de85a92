#include <iostream>

#include "geosplat/cli.hpp"

int main(int argc, char** argv) { return geosplat::run_cli(argc, argv, std::cout, std::cerr); }
