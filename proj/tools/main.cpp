#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return chapcli::cli_main(argc, argv, std::cout);
}
