#include <string>
#include <vector>

#include "rpo_lab/cli.hpp"

int main(int argc, char** argv) {
  return rpo::cli::run(std::vector<std::string>(argv, argv + argc));
}
