#include "spi/haar.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace spi {

namespace {

const double kInvSqrt2 = 0.70710678118654752440;

void check_square_pow2(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.extent(0) != t.extent(1))
    throw std::invalid_argument(std::string(what) + ": square image required");
  int side = static_cast<int>(t.extent(0));
  if (side <= 0 || (side & (side - 1)) != 0)
    throw std::invalid_argument(std::string(what) + ": side must be a power of two, got " +
                                std::to_string(side));
}

}  // namespace

Tensor haar_dwt(const Tensor& image) {
  check_square_pow2(image, "haar_dwt");
  int side = static_cast<int>(image.extent(0));
  Tensor out = image;
  std::vector<double> tmp(static_cast<size_t>(side));
  for (int n = side; n > 1; n /= 2) {
    // rows
    for (int y = 0; y < n; ++y) {
      for (int i = 0; i < n / 2; ++i) {
        double a = out(y, 2 * i), b = out(y, 2 * i + 1);
        tmp[static_cast<size_t>(i)] = (a + b) * kInvSqrt2;
        tmp[static_cast<size_t>(n / 2 + i)] = (a - b) * kInvSqrt2;
      }
      for (int i = 0; i < n; ++i) out(y, i) = tmp[static_cast<size_t>(i)];
    }
    // columns
    for (int x = 0; x < n; ++x) {
      for (int i = 0; i < n / 2; ++i) {
        double a = out(2 * i, x), b = out(2 * i + 1, x);
        tmp[static_cast<size_t>(i)] = (a + b) * kInvSqrt2;
        tmp[static_cast<size_t>(n / 2 + i)] = (a - b) * kInvSqrt2;
      }
      for (int i = 0; i < n; ++i) out(i, x) = tmp[static_cast<size_t>(i)];
    }
  }
  return out;
}

Tensor haar_idwt(const Tensor& coeffs) {
  check_square_pow2(coeffs, "haar_idwt");
  int side = static_cast<int>(coeffs.extent(0));
  Tensor out = coeffs;
  std::vector<double> tmp(static_cast<size_t>(side));
  for (int n = 2; n <= side; n *= 2) {
    for (int x = 0; x < n; ++x) {
      for (int i = 0; i < n / 2; ++i) {
        double s = out(i, x), d = out(n / 2 + i, x);
        tmp[static_cast<size_t>(2 * i)] = (s + d) * kInvSqrt2;
        tmp[static_cast<size_t>(2 * i + 1)] = (s - d) * kInvSqrt2;
      }
      for (int i = 0; i < n; ++i) out(i, x) = tmp[static_cast<size_t>(i)];
    }
    for (int y = 0; y < n; ++y) {
      for (int i = 0; i < n / 2; ++i) {
        double s = out(y, i), d = out(y, n / 2 + i);
        tmp[static_cast<size_t>(2 * i)] = (s + d) * kInvSqrt2;
        tmp[static_cast<size_t>(2 * i + 1)] = (s - d) * kInvSqrt2;
      }
      for (int i = 0; i < n; ++i) out(y, i) = tmp[static_cast<size_t>(i)];
    }
  }
  return out;
}

}  // namespace spi
