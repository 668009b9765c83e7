#pragma once

#include <complex>
#include <vector>

namespace spi::detail {

// In-place 2-D complex FFT (rows x cols, row-major), unnormalized. Backed by
// FFTW with deterministic (estimate-mode) planning; safe to call from multiple
// threads on distinct buffers.
void fft2(std::vector<std::complex<double>>& buf, int rows, int cols, bool inverse);

}  // namespace spi::detail
