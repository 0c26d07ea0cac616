#include "flowinv/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return flowinv::run_cli(argc, argv, std::cout, std::cerr); }
