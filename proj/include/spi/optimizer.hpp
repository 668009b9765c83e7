#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spi/params.hpp"
#include "spi/tensor.hpp"

namespace spi {

enum class OptKind { sgd, adam };

struct OptimizerConfig {
  OptKind kind = OptKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// SGD / Adam over named parameters. Adam moments are allocated lazily per
// parameter; bias correction uses the 1-indexed step count, which increases
// by exactly one per apply().
template <class T>
class OptimizerT {
 public:
  explicit OptimizerT(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  void apply(ParameterSetT<T>& params,
             const std::vector<std::pair<std::string, const TensorT<T>*>>& grads) {
    ++step_;
    T lr = static_cast<T>(cfg_.learning_rate);
    for (const auto& [name, g] : grads) {
      TensorT<T>& p = params.at(name);
      if (!p.same_shape(*g))
        throw std::invalid_argument("optimizer: grad shape mismatch for " + name);
      for (const T& v : g->data)
        if (!std::isfinite(static_cast<double>(v)))
          throw std::runtime_error("optimizer: non-finite gradient for parameter " + name);
      if (cfg_.kind == OptKind::sgd) {
        for (int64_t i = 0; i < p.numel(); ++i) p(i) -= lr * (*g)(i);
      } else {
        Moments& m = moments_[name];
        if (m.m.numel() != p.numel()) {
          m.m = TensorT<T>::zeros(p.shape);
          m.v = TensorT<T>::zeros(p.shape);
        }
        T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        T eps = static_cast<T>(cfg_.epsilon);
        T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(step_)));
        T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(step_)));
        for (int64_t i = 0; i < p.numel(); ++i) {
          T gi = (*g)(i);
          m.m(i) = b1 * m.m(i) + (T(1) - b1) * gi;
          m.v(i) = b2 * m.v(i) + (T(1) - b2) * gi * gi;
          T mhat = m.m(i) / c1;
          T vhat = m.v(i) / c2;
          p(i) -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
    }
  }

 private:
  struct Moments {
    TensorT<T> m, v;
  };
  OptimizerConfig cfg_;
  int64_t step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

using Optimizer = OptimizerT<float>;

}  // namespace spi
