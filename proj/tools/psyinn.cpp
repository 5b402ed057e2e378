#include <iostream>

#include "psyinn/cli.hpp"

int main(int argc, char** argv) { return psyinn::cli::run(argc, argv, std::cout, std::cerr); }
