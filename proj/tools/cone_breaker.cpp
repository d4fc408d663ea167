#include <iostream>

#include "cone_breaker/cli.hpp"

int main(int argc, char** argv) { return cone_breaker::cli::run(argc, argv, std::cout, std::cerr); }
