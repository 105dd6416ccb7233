#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return theragan::cli::run(argc, argv, std::cout, std::cerr); }
