#include <iostream>

#include "diffro/cli.hpp"

int main(int argc, char** argv) { return diffro::run_cli(argc, argv, std::cout, std::cerr); }
