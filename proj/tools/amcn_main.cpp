#include <iostream>

#include "amcn/cli.hpp"

int main(int argc, char** argv) { return amcn::run_cli(argc, argv, std::cout, std::cerr); }
