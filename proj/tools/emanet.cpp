#include <iostream>
#include <string>
#include <vector>

#include "emanet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return emanet::run_cli(args, std::cout, std::cerr);
}
