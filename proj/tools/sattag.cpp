#include "sattag/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return sattag::run_cli(argc, argv, std::cout, std::cerr); }
