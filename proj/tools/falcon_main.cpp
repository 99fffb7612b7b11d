#include <iostream>
#include <string>
#include <vector>

#include "falcon/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return falcon::cli::run(args, std::cout, std::cerr);
}
