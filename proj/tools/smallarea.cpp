#include <string>
#include <vector>

#include "smallarea/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return smallarea::cli::run(args);
}
