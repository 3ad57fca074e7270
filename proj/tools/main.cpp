#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  auto env = cotbench::cli::process_environment();
  return cotbench::cli::run(std::vector<std::string>(argv + 1, argv + argc), env);
}
