#include "spi/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>

namespace spi::detail {

namespace {

std::mutex plan_mutex;

// One cached plan per (rows, cols, direction), created on aligned scratch and
// re-executed on caller buffers via the new-array interface. FFTW_ESTIMATE
// keeps plan selection deterministic run to run.
fftw_plan get_plan(int rows, int cols, bool inverse) {
  static std::map<std::tuple<int, int, bool>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(plan_mutex);
  auto key = std::make_tuple(rows, cols, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  fftw_complex* tmp = fftw_alloc_complex(static_cast<size_t>(rows) * cols);
  if (!tmp) throw std::bad_alloc();
  fftw_plan p = fftw_plan_dft_2d(rows, cols, tmp, tmp, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(tmp);
  if (!p) throw std::runtime_error("fftw planning failed");
  cache.emplace(key, p);
  return p;
}

}  // namespace

void fft2(std::vector<std::complex<double>>& buf, int rows, int cols, bool inverse) {
  if (static_cast<size_t>(rows) * cols != buf.size())
    throw std::invalid_argument("fft2: buffer size mismatch");
  fftw_plan p = get_plan(rows, cols, inverse);
  auto* d = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_execute_dft(p, d, d);
}

}  // namespace spi::detail
