#include "spi/hadamard.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <stdexcept>

#include "spi/rng.hpp"

namespace spi {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

Tensor hadamard_full(int image_side) {
  if (!is_pow2(image_side))
    throw std::invalid_argument("hadamard_full: image side must be a power of two, got " +
                                std::to_string(image_side));
  int64_t n = static_cast<int64_t>(image_side) * image_side;
  Tensor h({n, n});
  // Sylvester construction: H[i][j] = (-1)^popcount(i & j).
  for (int64_t i = 0; i < n; ++i) {
    double* row = h.ptr() + i * n;
    for (int64_t j = 0; j < n; ++j)
      row[j] = (std::popcount(static_cast<uint64_t>(i & j)) & 1) ? -1.0 : 1.0;
  }
  return h;
}

int sequency2d(const double* pattern, int side) {
  int changes = 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x + 1 < side; ++x)
      if (pattern[y * side + x] * pattern[y * side + x + 1] < 0.0) ++changes;
  for (int x = 0; x < side; ++x)
    for (int y = 0; y + 1 < side; ++y)
      if (pattern[y * side + x] * pattern[(y + 1) * side + x] < 0.0) ++changes;
  return changes;
}

std::vector<uint32_t> russian_doll_order(const Tensor& full_basis, int image_side) {
  if (!is_pow2(image_side)) throw std::invalid_argument("russian_doll_order: side not power of 2");
  int64_t n = static_cast<int64_t>(image_side) * image_side;
  if (full_basis.rank() != 2 || full_basis.extent(0) != n || full_basis.extent(1) != n)
    throw std::invalid_argument("russian_doll_order: expected full basis " + std::to_string(n) +
                                "x" + std::to_string(n));
  int log_side = std::countr_zero(static_cast<unsigned>(image_side));

  // Shell of a Sylvester row i = iy*side + ix: the smallest k such that the
  // pattern is constant on (side/2^k)-sized blocks, i.e. both index components
  // are multiples of side/2^k.
  auto component_shell = [&](int c) {
    if (c == 0) return 0;
    int tz = std::countr_zero(static_cast<unsigned>(c));
    return log_side - std::min(tz, log_side);
  };

  struct Key {
    int shell;
    int seq;
    uint32_t row;
  };
  std::vector<Key> keys(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int iy = static_cast<int>(i / image_side);
    int ix = static_cast<int>(i % image_side);
    int shell = std::max(component_shell(iy), component_shell(ix));
    int seq = sequency2d(full_basis.ptr() + i * n, image_side);
    keys[static_cast<size_t>(i)] = {shell, seq, static_cast<uint32_t>(i)};
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.shell != b.shell) return a.shell < b.shell;
    if (a.seq != b.seq) return a.seq < b.seq;
    return a.row < b.row;
  });
  std::vector<uint32_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = keys[static_cast<size_t>(i)].row;
  return order;
}

std::vector<uint32_t> random_permutation_order(int n, uint64_t seed) {
  if (n < 0) throw std::invalid_argument("random_permutation_order: negative n");
  std::vector<uint32_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0u);
  Pcg32 rng(seed, 0x7f3e);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)],
              perm[static_cast<size_t>(rng.below(static_cast<uint64_t>(i) + 1))]);
  return perm;
}

}  // namespace spi
