#include <iostream>

#include "mrseg/cli.hpp"

int main(int argc, char** argv) { return mrseg::cli::run(argc, argv, std::cout, std::cerr); }
