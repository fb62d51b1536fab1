#include <iostream>

#include "pace/cli.hpp"

int main(int argc, char** argv) { return pace::cli::run(argc, argv, std::cout, std::cerr); }
