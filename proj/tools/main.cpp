#include <iostream>

#include "affectlab/cli.hpp"

int main(int argc, char** argv) { return affectlab::cli::run(argc, argv, std::cout, std::cerr); }
