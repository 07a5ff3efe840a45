#include <iostream>

#include "gresnet/cli.hpp"

int main(int argc, char** argv) { return gresnet::cli::run(argc, argv, std::cout, std::cerr); }
