#include "ot/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ot::cli::run(argc, argv, std::cout, std::cerr); }
