#include "unicon/toolkit/cli.hpp"

int main(int argc, char** argv) {
  return unicon::toolkit::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
