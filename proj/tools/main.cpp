#include <iostream>

#include "conefluct/cli.hpp"

int main(int argc, char** argv) { return conefluct::run_cli(argc, argv, std::cout, std::cerr); }
