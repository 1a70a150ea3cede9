#include <iostream>

#include "cubemap/cli.hpp"

int main(int argc, char** argv) {
  return cubemap::cli::Dispatch(argc, argv, std::cout, std::cerr);
}
