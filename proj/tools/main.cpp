#include <iostream>

#include "commands.hpp"
#include "disenpoi/parallel.hpp"

int main(int argc, char** argv) {
  disenpoi::tune_allocator();
  return disenpoi::cli::run(argc, argv, std::cout, std::cerr);
}
