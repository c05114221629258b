#include <iostream>
#include <string>
#include <vector>

#include "catsel/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return catsel::cli::run(args, std::cout, std::cerr);
}
