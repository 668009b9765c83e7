#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "spi/autodiff.hpp"
#include "spi/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace spi;
using spi::testing::check_gradients;

namespace {

Tensor random_tensor(Shape s, Pcg32& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Keeps relu/maxpool inputs away from their kinks so finite differences see a
// smooth function.
Tensor random_tensor_nonzero(Shape s, Pcg32& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data) {
    double u = rng.uniform(0.15, 1.0);
    v = rng.uniform() < 0.5 ? -u : u;
  }
  return t;
}

}  // namespace

TEST_CASE("matmul forward examples") {
  Tape<double> t;
  int eye = t.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
  int v = t.leaf(Tensor::from({2, 1}, {3, 1}));
  int r = t.matmul(eye, v);
  CHECK(t.value(r)(0, 0) == 3.0);
  CHECK(t.value(r)(1, 0) == 1.0);

  int h = t.leaf(Tensor::from({2, 2}, {1, 1, 1, -1}));
  int r2 = t.matmul(h, v);
  CHECK(t.value(r2)(0, 0) == 4.0);
  CHECK(t.value(r2)(1, 0) == 2.0);

  CHECK_THROWS_AS(t.matmul(eye, t.leaf(Tensor({3, 2}))), std::invalid_argument);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Pcg32 rng(7);
  Tensor a = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  Tensor want = oracle::naive_matmul(a, b);
  Tape<double> t;
  int r = t.matmul(t.leaf(a), t.leaf(b));
  for (int64_t i = 0; i < want.numel(); ++i)
    CHECK(t.value(r)(i) == doctest::Approx(want(i)).epsilon(1e-12));
}

TEST_CASE("conv2d identity and constant-kernel examples") {
  Pcg32 rng(3);
  Tensor x = random_tensor({1, 1, 5, 5}, rng);
  Tensor k({1, 1, 3, 3});
  k(0, 0, 1, 1) = 1.0;  // delta kernel
  Tape<double> t;
  int y = t.conv2d(t.leaf(x), t.leaf(k));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(t.value(y)(i) == doctest::Approx(x(i)));

  Tensor ones({1, 1, 3, 3}, 1.0);
  Tensor c({1, 1, 5, 5}, 2.0);
  Tape<double> t2;
  int y2 = t2.conv2d(t2.leaf(c), t2.leaf(ones));
  CHECK(t2.value(y2)(0, 0, 2, 2) == doctest::Approx(18.0));  // 9 * 2 at interior
  CHECK(t2.value(y2)(0, 0, 0, 0) == doctest::Approx(8.0));   // corner sees 4 taps

  CHECK_THROWS_AS(t2.conv2d(t2.leaf(Tensor({1, 2, 4, 4})), t2.leaf(Tensor({1, 1, 3, 3}))),
                  std::invalid_argument);
}

TEST_CASE("conv2d matches direct-loop oracle") {
  Pcg32 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t B = 1 + static_cast<int64_t>(rng.below(2));
    int64_t C = 1 + static_cast<int64_t>(rng.below(3));
    int64_t F = 1 + static_cast<int64_t>(rng.below(3));
    int64_t H = 3 + static_cast<int64_t>(rng.below(4));
    int64_t W = 3 + static_cast<int64_t>(rng.below(4));
    int64_t ks = rng.below(2) ? 3 : 5;
    Tensor x = random_tensor({B, C, H, W}, rng);
    Tensor k = random_tensor({F, C, ks, ks}, rng);
    Tensor want = oracle::naive_conv2d_same(x, k);
    Tape<double> t;
    int y = t.conv2d(t.leaf(x), t.leaf(k));
    for (int64_t i = 0; i < want.numel(); ++i)
      CHECK(std::abs(t.value(y)(i) - want(i)) < 1e-10);
  }
}

TEST_CASE("activation and pooling basics") {
  Tape<double> t;
  int x = t.leaf(Tensor::from({2}, {-2, 3}));
  int r = t.relu(x);
  CHECK(t.value(r)(0) == 0.0);
  CHECK(t.value(r)(1) == 3.0);

  // dropout with p=0 is the identity even in training mode
  Pcg32 rng(1);
  int d = t.dropout(x, 0.0, rng, true);
  CHECK(t.value(d)(0) == -2.0);
  CHECK_THROWS_AS(t.dropout(x, 1.0, rng, true), std::invalid_argument);

  // maxpool then nearest upsample of a constant image is the constant image
  Tensor c({1, 1, 4, 4}, 5.0);
  int ci = t.leaf(c);
  int up = t.upsample_nn(t.maxpool2(ci), 2);
  for (int64_t i = 0; i < 16; ++i) CHECK(t.value(up)(i) == 5.0);
}

TEST_CASE("backward: linear functional gives all-ones gradient") {
  Pcg32 rng(5);
  Tensor x = random_tensor({3, 4}, rng);
  Tape<double> t;
  int xi = t.leaf(x, true);
  t.backward(t.sum(xi));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(t.grad(xi)(i) == 1.0);
}

TEST_CASE("backward: least-squares gradient matches closed form") {
  Pcg32 rng(17);
  int64_t B = 6, in = 4, out = 3;
  Tensor X = random_tensor({B, in}, rng);
  Tensor W = random_tensor({in, out}, rng);
  Tensor Y = random_tensor({B, out}, rng);

  Tape<double> t;
  int wi = t.leaf(W, true);
  int pred = t.matmul(t.leaf(X), wi);
  int diff = t.sub(pred, t.leaf(Y));
  int loss = t.mean(t.mul(diff, diff));
  t.backward(loss);

  // d/dW mean((XW - Y)^2) = 2/(B*out) * X^T (XW - Y)
  Tensor resid = oracle::naive_matmul(X, W);
  for (int64_t i = 0; i < resid.numel(); ++i) resid(i) -= Y(i);
  Tensor xt({in, B});
  for (int64_t i = 0; i < B; ++i)
    for (int64_t j = 0; j < in; ++j) xt(j, i) = X(i, j);
  Tensor want = oracle::naive_matmul(xt, resid);
  double c = 2.0 / static_cast<double>(B * out);
  for (int64_t i = 0; i < want.numel(); ++i)
    CHECK(t.grad(wi)(i) == doctest::Approx(c * want(i)).epsilon(1e-9));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> t;
  int x = t.leaf(Tensor({2, 2}), true);
  CHECK_THROWS_AS(t.backward(t.relu(x)), std::invalid_argument);
}

TEST_CASE("gradient check: every registered operator") {
  Pcg32 rng(23);

  auto weighted_sum = [](Tape<double>& t, int out, Pcg32 wrng) {
    Tensor w(t.value(out).shape);
    for (auto& v : w.data) v = wrng.uniform(-1.0, 1.0);
    return t.sum(t.mul(out, t.leaf(w)));
  };

  SUBCASE("elementwise binary ops") {
    for (int trial = 0; trial < 20; ++trial) {
      Shape s = {1 + static_cast<int64_t>(rng.below(3)), 1 + static_cast<int64_t>(rng.below(4))};
      Tensor a = random_tensor(s, rng);
      Tensor b = random_tensor(s, rng);
      for (auto& v : b.data) v = v < 0 ? v - 0.5 : v + 0.5;  // keep divisors off zero
      Pcg32 wrng = rng.split(trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            int sum1 = t.add(in[0], in[1]);
            int sum2 = t.sub(sum1, t.mul(in[0], in[1]));
            int sum3 = t.div(sum2, in[1]);
            return weighted_sum(t, sum3, wrng);
          },
          {a, b});
    }
  }

  SUBCASE("scale, add_scalar, sqrt, reductions") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({2, 3}, rng, 0.5, 2.0);
      Pcg32 wrng = rng.split(100 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            int x = t.add_scalar(t.scale(in[0], 1.7), 0.3);
            int y = t.sqrt_elem(x);
            return t.add(t.mean(y), weighted_sum(t, y, wrng));
          },
          {a});
    }
  }

  SUBCASE("relu and leaky_relu") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor_nonzero({3, 3}, rng);
      Pcg32 wrng = rng.split(200 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            return weighted_sum(t, t.add(t.relu(in[0]), t.leaky_relu(in[0], 0.01)), wrng);
          },
          {a});
    }
  }

  SUBCASE("matmul and biases") {
    for (int trial = 0; trial < 20; ++trial) {
      int64_t m = 1 + static_cast<int64_t>(rng.below(3));
      int64_t k = 1 + static_cast<int64_t>(rng.below(3));
      int64_t n = 1 + static_cast<int64_t>(rng.below(3));
      Tensor a = random_tensor({m, k}, rng);
      Tensor b = random_tensor({k, n}, rng);
      Tensor bias = random_tensor({n}, rng);
      Pcg32 wrng = rng.split(300 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            return weighted_sum(t, t.add_row_bias(t.matmul(in[0], in[1]), in[2]), wrng);
          },
          {a, b, bias});
    }
  }

  SUBCASE("conv2d and channel bias") {
    for (int trial = 0; trial < 20; ++trial) {
      int64_t C = 1 + static_cast<int64_t>(rng.below(2));
      int64_t F = 1 + static_cast<int64_t>(rng.below(2));
      Tensor x = random_tensor({1, C, 4, 4}, rng);
      Tensor k = random_tensor({F, C, 3, 3}, rng);
      Tensor bias = random_tensor({F}, rng);
      Pcg32 wrng = rng.split(400 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            return weighted_sum(t, t.add_channel_bias(t.conv2d(in[0], in[1]), in[2]), wrng);
          },
          {x, k, bias});
    }
  }

  SUBCASE("maxpool2 and upsample_nn") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor_nonzero({1, 2, 4, 4}, rng);
      Pcg32 wrng = rng.split(500 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            return weighted_sum(t, t.upsample_nn(t.maxpool2(in[0]), 2), wrng);
          },
          {x});
    }
  }

  SUBCASE("reshape, permute, concat, crop") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({1, 2, 3, 4}, rng);
      Tensor b = random_tensor({1, 1, 3, 4}, rng);
      Pcg32 wrng = rng.split(600 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            int cat = t.concat_channels(in[0], in[1]);
            int perm = t.permute(cat, {0, 1, 3, 2});  // swap H and W
            int crop = t.crop2d(perm, 1, 0, 2, 3);
            int flat = t.reshape(crop, {2, 9});
            return weighted_sum(t, flat, wrng);
          },
          {a, b});
    }
  }

  SUBCASE("dropout (fixed mask per rebuild)") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({4, 4}, rng);
      uint64_t mask_seed = 900 + static_cast<uint64_t>(trial);
      Pcg32 wrng = rng.split(700 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            Pcg32 drng(mask_seed);
            return weighted_sum(t, t.dropout(in[0], 0.4, drng, true), wrng);
          },
          {x});
    }
  }

  SUBCASE("batchnorm, training and inference modes") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({4, 3}, rng);
      Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
      Tensor beta = random_tensor({3}, rng);
      bool training = trial % 2 == 0;
      Tensor rmean = random_tensor({3}, rng);
      Tensor rvar = random_tensor({3}, rng, 0.5, 1.5);
      Pcg32 wrng = rng.split(800 + trial);
      check_gradients(
          [&](Tape<double>& t, const std::vector<int>& in) {
            Tensor rm = rmean, rv = rvar;  // fresh copies: stats mutate in training mode
            BatchNormStats<double> st{&rm, &rv};
            return weighted_sum(t, t.batchnorm(in[0], in[1], in[2], st, training), wrng);
          },
          {x, gamma, beta});
    }
  }
}

TEST_CASE("dropout expectation: mean of many draws approximates identity") {
  Pcg32 rng(31);
  Tensor x = random_tensor({3, 3}, rng, 0.5, 1.5);
  double p = 0.3;
  Tensor acc({3, 3});
  const int draws = 20000;
  Pcg32 drng(99);
  for (int d = 0; d < draws; ++d) {
    Tape<double> t;
    int y = t.dropout(t.leaf(x), p, drng, true);
    for (int64_t i = 0; i < acc.numel(); ++i) acc(i) += t.value(y)(i);
  }
  for (int64_t i = 0; i < acc.numel(); ++i) {
    double mean = acc(i) / draws;
    CHECK(std::abs(mean - x(i)) / std::abs(x(i)) < 0.02);
  }
}

TEST_CASE("batchnorm training output has zero mean, unit variance per feature") {
  Pcg32 rng(41);
  Tensor x = random_tensor({32, 5}, rng, -3.0, 4.0);
  Tensor gamma({5}, 1.0), beta({5}, 0.0);
  Tensor rm({5}, 0.0), rv({5}, 1.0);
  Tape<double> t;
  BatchNormStats<double> st{&rm, &rv};
  int y = t.batchnorm(t.leaf(x), t.leaf(gamma), t.leaf(beta), st, true);
  for (int64_t j = 0; j < 5; ++j) {
    double mu = 0, var = 0;
    for (int64_t i = 0; i < 32; ++i) mu += t.value(y)(i, j);
    mu /= 32;
    for (int64_t i = 0; i < 32; ++i) {
      double d = t.value(y)(i, j) - mu;
      var += d * d;
    }
    var /= 32;
    CHECK(std::abs(mu) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
  // batch of one is rejected in training mode
  Tape<double> t2;
  BatchNormStats<double> st2{&rm, &rv};
  CHECK_THROWS_AS(t2.batchnorm(t2.leaf(Tensor({1, 5})), t2.leaf(gamma), t2.leaf(beta), st2, true),
                  std::invalid_argument);
}
