#include <iostream>
#include <string>
#include <vector>

#include "sfl/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sfl::run_cli(args, std::cout, std::cerr);
}
