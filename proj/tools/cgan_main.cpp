#include <iostream>

#include "cgan/cli.hpp"

int main(int argc, char** argv) { return cgan::cli_main(argc, argv, std::cout, std::cerr); }
