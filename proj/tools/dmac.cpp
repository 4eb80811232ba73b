#include <iostream>

#include "dmac/cli/app.hpp"

int main(int argc, char** argv) { return dmac::cli::run(argc, argv, std::cout, std::cerr); }
