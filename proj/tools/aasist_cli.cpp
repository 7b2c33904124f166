#include <iostream>

#include "aasist/cli.hpp"

int main(int argc, char** argv) { return aasist::cli::run(argc, argv, std::cout, std::cerr); }
