#include <Eigen/Core>

#include "dgp/harness.hpp"

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);  // keep output files bit-reproducible across runs
  return dgp::cli(argc, argv);
}
