#include "spi/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include "spi/blas.hpp"
#include "spi/fft.hpp"
#include "spi/hadamard.hpp"
#include "spi/rng.hpp"

namespace spi {

std::string to_string(Ordering o) {
  switch (o) {
    case Ordering::sylvester: return "sylvester";
    case Ordering::russian_doll: return "russian_doll";
    case Ordering::random_permutation: return "random_permutation";
    case Ordering::grayscale_random: return "grayscale_random";
  }
  return "?";
}

Ordering ordering_from_string(const std::string& s) {
  if (s == "sylvester") return Ordering::sylvester;
  if (s == "russian_doll") return Ordering::russian_doll;
  if (s == "random_permutation") return Ordering::random_permutation;
  if (s == "grayscale_random") return Ordering::grayscale_random;
  throw std::invalid_argument("unknown ordering: " + s);
}

int MeasurementModel::m() const {
  if (kind == ModelKind::autocorrelation) {
    int l = 2 * image_side - 1;
    return l * l;
  }
  return static_cast<int>(matrix.extent(0));
}

double MeasurementModel::compression_ratio() const {
  if (kind != ModelKind::linear || m() == 0) return 1.0;
  return static_cast<double>(full_basis_size) / static_cast<double>(m());
}

MeasurementModel make_hadamard_model(int image_side, Ordering ordering, uint64_t seed) {
  if (ordering == Ordering::grayscale_random)
    throw std::invalid_argument("grayscale ordering needs make_grayscale_model");
  Tensor full = hadamard_full(image_side);
  int64_t n = full.extent(0);
  std::vector<uint32_t> order;
  switch (ordering) {
    case Ordering::sylvester:
      order.resize(static_cast<size_t>(n));
      std::iota(order.begin(), order.end(), 0u);
      break;
    case Ordering::russian_doll: order = russian_doll_order(full, image_side); break;
    case Ordering::random_permutation:
      order = random_permutation_order(static_cast<int>(n), seed);
      break;
    default: break;
  }
  MeasurementModel model;
  model.kind = ModelKind::linear;
  model.ordering = ordering;
  model.image_side = image_side;
  model.full_basis_size = static_cast<int>(n);
  model.matrix = Tensor({n, n});
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(full.ptr() + static_cast<int64_t>(order[static_cast<size_t>(i)]) * n, n,
                model.matrix.ptr() + i * n);
  return model;
}

MeasurementModel make_grayscale_model(int pattern_count, int image_side, uint64_t seed) {
  if (pattern_count < 1) throw std::invalid_argument("make_grayscale_model: need >= 1 pattern");
  int64_t n = static_cast<int64_t>(image_side) * image_side;
  MeasurementModel model;
  model.kind = ModelKind::linear;
  model.ordering = Ordering::grayscale_random;
  model.image_side = image_side;
  model.full_basis_size = pattern_count;
  model.matrix = Tensor({pattern_count, n});
  Pcg32 rng(seed, 0x6e1a);
  for (auto& v : model.matrix.data) v = rng.uniform();
  return model;
}

MeasurementModel make_autocorr_model(int image_side) {
  MeasurementModel model;
  model.kind = ModelKind::autocorrelation;
  model.image_side = image_side;
  int l = 2 * image_side - 1;
  model.full_basis_size = l * l;
  return model;
}

MeasurementModel compress(const MeasurementModel& model, int ratio) {
  if (model.kind != ModelKind::linear) throw std::invalid_argument("compress: linear model only");
  if (ratio < 1) throw std::invalid_argument("compress: ratio must be >= 1");
  int full = static_cast<int>(model.matrix.extent(0));
  if (full % ratio != 0)
    throw std::invalid_argument("compress: ratio " + std::to_string(ratio) +
                                " does not divide basis size " + std::to_string(full));
  return compress_to(model, full / ratio);
}

MeasurementModel compress_to(const MeasurementModel& model, int rows) {
  if (model.kind != ModelKind::linear)
    throw std::invalid_argument("compress_to: linear model only");
  int full = static_cast<int>(model.matrix.extent(0));
  if (rows < 1 || rows > full)
    throw std::invalid_argument("compress_to: row count " + std::to_string(rows) +
                                " outside 1.." + std::to_string(full));
  MeasurementModel out = model;
  int64_t n = model.matrix.extent(1);
  out.matrix = Tensor({rows, n});
  std::copy_n(model.matrix.ptr(), static_cast<int64_t>(rows) * n, out.matrix.ptr());
  return out;
}

Tensor forward_measure(const MeasurementModel& model, const Tensor& image) {
  if (image.rank() != 2 || image.extent(0) != model.image_side ||
      image.extent(1) != model.image_side)
    throw std::invalid_argument("forward_measure: image shape " + shape_str(image.shape) +
                                " does not match model side " +
                                std::to_string(model.image_side));
  if (model.kind == ModelKind::autocorrelation) {
    Tensor ac = autocorrelate(image);
    ac.shape = {ac.numel()};
    return ac;
  }
  int64_t m = model.matrix.extent(0), n = model.matrix.extent(1);
  Tensor g({m});
  detail::gemv(false, static_cast<int>(m), static_cast<int>(n), 1.0, model.matrix.ptr(),
               static_cast<int>(n), image.ptr(), 0.0, g.ptr());
  return g;
}

Tensor add_noise_snr(const Tensor& g, double snr_db, uint64_t seed) {
  double power = 0.0;
  for (double v : g.data) power += v * v;
  power /= static_cast<double>(g.numel());
  if (power <= 0.0) throw std::invalid_argument("add_noise_snr: zero-power signal");
  double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  Pcg32 rng(seed, 0x415e);
  Tensor out = g;
  for (auto& v : out.data) v += sigma * rng.normal();
  return out;
}

MeasurementModel perturb_model(const MeasurementModel& model, const MismatchSpec& spec) {
  if (model.kind != ModelKind::linear)
    throw std::invalid_argument("perturb_model: linear model only");
  MeasurementModel out = model;
  if (spec.mode == MismatchSpec::Mode::invert_elements) {
    if (spec.fraction < 0.0 || spec.fraction > 1.0)
      throw std::invalid_argument("perturb_model: fraction outside [0,1]");
    if (spec.fraction == 0.0) return out;
    int64_t total = out.matrix.numel();
    auto count = static_cast<int64_t>(std::llround(spec.fraction * static_cast<double>(total)));
    // Partial Fisher-Yates: the first `count` slots end up holding a uniform
    // sample of entry indices without replacement.
    std::vector<uint32_t> idx(static_cast<size_t>(total));
    std::iota(idx.begin(), idx.end(), 0u);
    Pcg32 rng(spec.seed, 0x9c2f);
    for (int64_t i = 0; i < count; ++i) {
      int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(total - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      out.matrix(idx[static_cast<size_t>(i)]) = -out.matrix(idx[static_cast<size_t>(i)]);
    }
  } else {
    if (spec.sigma < 0.0) throw std::invalid_argument("perturb_model: sigma must be >= 0");
    if (spec.sigma == 0.0) return out;
    Pcg32 rng(spec.seed, 0x51b7);
    for (auto& v : out.matrix.data) v += spec.sigma * rng.normal();
  }
  return out;
}

Tensor autocorrelate(const Tensor& image) {
  if (image.rank() != 2 || image.extent(0) != image.extent(1))
    throw std::invalid_argument("autocorrelate: square image required");
  int side = static_cast<int>(image.extent(0));
  int l = 2 * side - 1;
  std::vector<std::complex<double>> buf(static_cast<size_t>(l) * l, {0.0, 0.0});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      buf[static_cast<size_t>(y) * l + x] = image(y, x);
  detail::fft2(buf, l, l, false);
  for (auto& c : buf) c = std::norm(c);
  detail::fft2(buf, l, l, true);
  double scale = 1.0 / (static_cast<double>(l) * l);
  // Center the zero-shift term: raw index s maps to displacement s (mod l),
  // with values > side-1 representing negative shifts.
  Tensor out({l, l});
  int c = side - 1;
  for (int dy = -(side - 1); dy <= side - 1; ++dy)
    for (int dx = -(side - 1); dx <= side - 1; ++dx) {
      int sy = (dy + l) % l;
      int sx = (dx + l) % l;
      out(c + dy, c + dx) = buf[static_cast<size_t>(sy) * l + sx].real() * scale;
    }
  return out;
}

}  // namespace spi
