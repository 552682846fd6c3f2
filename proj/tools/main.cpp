#include <iostream>
#include <string>
#include <vector>

#include "wsvad/commands.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return wsvad::cli_main(args, std::cout, std::cerr);
}
