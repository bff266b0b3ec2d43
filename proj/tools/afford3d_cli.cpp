#include "afford3d/cli.hpp"
#include "afford3d/parallel.hpp"

int main(int argc, char** argv) {
  afford3d::tune_allocator();
  return afford3d::cli::run(argc, argv);
}
