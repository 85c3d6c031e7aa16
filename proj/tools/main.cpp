#include <iostream>
#include <string>
#include <vector>

#include "lumisplit/cli.hpp"

int main(int argc, char** argv) {
    lumisplit::cli::tune_allocator();
    std::vector<std::string> args(argv + 1, argv + argc);
    return lumisplit::cli::run(args, std::cout, std::cerr);
}
