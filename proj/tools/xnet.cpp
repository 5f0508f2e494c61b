#include <iostream>

#include "xnet/cli.hpp"

int main(int argc, char** argv) { return xnet::run_cli(argc, argv, std::cout, std::cerr); }
