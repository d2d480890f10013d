#include <iostream>

#include "bware/cli.hpp"

int main(int argc, char** argv) { return bware::run_cli(argc, argv, std::cout, std::cerr); }
