#include <iostream>

#include "bzsim/cli.hpp"

int main(int argc, char** argv) { return bzsim::run_cli(argc, argv, std::cout, std::cerr); }
