#include "malab/cli.hpp"

int main(int argc, char** argv) {
  return malab::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
