#include <iostream>

#include "unite/cli/commands.hpp"

int main(int argc, char** argv) { return unite::cli::run(argc, argv, std::cout, std::cerr); }
