#include <string>
#include <vector>

#include "serank/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return serank::cli::run(args);
}
