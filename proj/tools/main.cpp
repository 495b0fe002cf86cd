#include <iostream>

#include "wrtsam/cli.hpp"

int main(int argc, char** argv) { return wrtsam::cli::run(argc, argv, std::cout, std::cerr); }
