#include "counts/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return counts::cli::run(argc, argv, std::cout, std::cerr); }
