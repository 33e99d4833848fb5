#include <string>
#include <vector>

#include "steerlab/pipeline.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return steerlab::run_cli(args);
}
