#include <iostream>

#include "itect/cli.hpp"

int main(int argc, char** argv) { return itect::cli::run(argc, argv, std::cout, std::cerr); }
