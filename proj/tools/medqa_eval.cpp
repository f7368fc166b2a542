#include <iostream>
#include <string>
#include <vector>

#include "medqa/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return medqa::cli::run_cli(args, std::cout, std::cerr);
}
