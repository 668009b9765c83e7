#pragma once

#include <string>
#include <vector>

#include "spi/tensor.hpp"

namespace spi {

struct LsqrConfig {
  double atol = 1e-8;
  double btol = 1e-8;
  int max_iters = 2000;
  double damping = 0.0;
};

struct LsqrResult {
  Tensor x;
  std::vector<double> residual_norms;  // estimated ||Ax-b|| per iteration, non-increasing
  int iterations = 0;
  std::string stop_reason;
};

// Paige-Saunders LSQR for min ||Ax - b||_2 (optionally damped). Starting from
// x = 0, consistent underdetermined systems converge to the minimum-norm
// solution.
LsqrResult lsqr_solve(const Tensor& a, const Tensor& b, const LsqrConfig& cfg = {});

}  // namespace spi
