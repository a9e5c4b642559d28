#include <iostream>
#include <string>
#include <vector>

#include "pesl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pesl::run_cli(args, std::cout, std::cerr);
}
