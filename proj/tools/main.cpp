#include <iostream>

#include "quadattack/cli.hpp"

int main(int argc, char** argv) { return quadattack::run_cli(argc, argv, std::cout, std::cerr); }
