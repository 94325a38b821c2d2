#include <iostream>

#include "scalemix/cli.hpp"

int main(int argc, char** argv) { return scalemix::cli::run(argc, argv, std::cout, std::cerr); }
