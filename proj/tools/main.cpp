#include <iostream>

#include "pswa/cli.hpp"

int main(int argc, char** argv) {
  return pswa::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
