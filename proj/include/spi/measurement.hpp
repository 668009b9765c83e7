#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "spi/tensor.hpp"

namespace spi {

enum class ModelKind { linear, autocorrelation };

enum class Ordering { sylvester, russian_doll, random_permutation, grayscale_random };

std::string to_string(Ordering o);
Ordering ordering_from_string(const std::string& s);

// A forward measurement operator: either a pattern matrix (rows are vectorized
// illumination patterns) or the nonlinear autocorrelation operator.
struct MeasurementModel {
  ModelKind kind = ModelKind::linear;
  Ordering ordering = Ordering::sylvester;
  int image_side = 0;
  int full_basis_size = 0;  // N for linear Hadamard families, pattern count for grayscale
  Tensor matrix;            // [M x N], present iff kind == linear

  int n() const { return image_side * image_side; }
  int m() const;
  double compression_ratio() const;
};

// Hadamard-family model with the full (uncompressed) ordered basis. The seed
// is only consumed by the random_permutation ordering.
MeasurementModel make_hadamard_model(int image_side, Ordering ordering, uint64_t seed = 0);

// M random grayscale patterns, entries i.i.d. uniform on [0,1].
MeasurementModel make_grayscale_model(int pattern_count, int image_side, uint64_t seed);

// Nonlinear autocorrelation operator; measurements have length (2*side-1)^2.
MeasurementModel make_autocorr_model(int image_side);

// Keep the first N/ratio rows. The ratio must divide the full basis size.
MeasurementModel compress(const MeasurementModel& model, int ratio);

// Explicit row-count override for non-dyadic compressions.
MeasurementModel compress_to(const MeasurementModel& model, int rows);

// Apply the forward model to a side x side image.
Tensor forward_measure(const MeasurementModel& model, const Tensor& image);

// Additive white Gaussian noise at a target SNR; signal power is mean(g^2).
Tensor add_noise_snr(const Tensor& g, double snr_db, uint64_t seed);

struct MismatchSpec {
  enum class Mode { invert_elements, gaussian_perturb };
  Mode mode = Mode::invert_elements;
  double fraction = 0.0;  // invert mode, in [0,1]
  double sigma = 0.0;     // gaussian mode, >= 0
  uint64_t seed = 0;
};

// Model-mismatch perturbation of a linear model. The perturbed model generates
// data; reconstruction baselines keep the unperturbed operator.
MeasurementModel perturb_model(const MeasurementModel& model, const MismatchSpec& spec);

// Full linear autocorrelation of a side x side image, computed via FFT on a
// (2*side-1)^2 canvas and centered: out(center + d) = sum_x f(x) f(x+d).
Tensor autocorrelate(const Tensor& image);

}  // namespace spi
