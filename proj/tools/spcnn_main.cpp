#include <iostream>

#include "spcnn/cli.hpp"

int main(int argc, char** argv) { return spcnn::run_cli(argc, argv, std::cout, std::cerr); }
