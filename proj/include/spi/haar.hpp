#pragma once

#include "spi/tensor.hpp"

namespace spi {

// Orthonormal multi-level 2-D Haar transform (full depth, Mallat layout).
// Requires a square power-of-two side; dwt/idwt are exact inverses and
// isometries.
Tensor haar_dwt(const Tensor& image);
Tensor haar_idwt(const Tensor& coeffs);

}  // namespace spi
