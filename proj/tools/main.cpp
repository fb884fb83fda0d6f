#include <iostream>
#include <string>
#include <vector>

#include "ldct/cli.hpp"

int main(int argc, char** argv) {
  return ldct::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
