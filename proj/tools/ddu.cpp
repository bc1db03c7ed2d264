#include <iostream>

#include "ddu/cli.hpp"

int main(int argc, char** argv) { return ddu::run_cli(argc, argv, std::cout, std::cerr); }
