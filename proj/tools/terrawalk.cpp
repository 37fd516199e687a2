#include <iostream>

#include "terrawalk/cli.hpp"

int main(int argc, char** argv) { return terrawalk::run_command(argc, argv, std::cout, std::cerr); }
