#pragma once

#include <cstdint>
#include <vector>

#include "spi/tensor.hpp"

namespace spi {

// Full Sylvester Hadamard basis for a square image: N = side^2 rows, each row
// reshaping to one side x side +/-1 pattern. Requires side to be a power of
// two; satisfies H * H^T = N * I exactly.
Tensor hadamard_full(int image_side);

// Total count of horizontal plus vertical sign changes of a +/-1 pattern; the
// 2-D analogue of Walsh sequency used to rank patterns by spatial frequency.
int sequency2d(const double* pattern, int side);

// Russian-Doll row ordering: nested shells such that the first 4^k rows form a
// complete basis for the image block-averaged to 2^k x 2^k, with rows inside
// each shell sorted by ascending 2-D sequency. Assumes a Sylvester basis.
std::vector<uint32_t> russian_doll_order(const Tensor& full_basis, int image_side);

// Uniform random permutation of 0..n-1, deterministic per seed.
std::vector<uint32_t> random_permutation_order(int n, uint64_t seed);

}  // namespace spi
