#include <iostream>

#include "mpner/cli.hpp"

int main(int argc, char** argv) { return mpner::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
