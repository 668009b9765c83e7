#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "spi/optimizer.hpp"
#include "spi/params.hpp"
#include "spi/rng.hpp"
#include "spi/tensor.hpp"

using namespace spi;

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0}), std::invalid_argument);

  Tensor bad = Tensor::from({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(bad.ensure_finite("test"), std::runtime_error);
  Tensor ok = Tensor::from({2}, {1.0, -2.0});
  CHECK_NOTHROW(ok.ensure_finite("test"));
}

TEST_CASE("pcg32 determinism and splitting") {
  Pcg32 a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u32() == b.next_u32());

  Pcg32 parent(7);
  Pcg32 c1 = parent.split(1), c2 = parent.split(2), c1b = parent.split(1);
  CHECK(c1.next_u32() == c1b.next_u32());
  CHECK(c1.next_u32() != c2.next_u32());

  // uniform stays in [0,1); normal has roughly the right spread
  Pcg32 r(123);
  double sum = 0, sumsq = 0;
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    double n = r.normal();
    sum += n;
    sumsq += n * n;
  }
  CHECK(std::abs(sum / 10000.0) < 0.05);
  CHECK(std::abs(sumsq / 10000.0 - 1.0) < 0.05);
}

TEST_CASE("optimizer: sgd and adam updates") {
  SUBCASE("sgd definition") {
    ParameterSetT<double> params;
    params.add("p", TensorT<double>::from({1}, {1.0}));
    OptimizerConfig cfg;
    cfg.kind = OptKind::sgd;
    cfg.learning_rate = 0.1;
    OptimizerT<double> opt(cfg);
    TensorT<double> g = TensorT<double>::from({1}, {2.0});
    opt.apply(params, {{"p", &g}});
    CHECK(params.at("p")(0) == doctest::Approx(0.8));
    CHECK(opt.step_count() == 1);
  }

  SUBCASE("adam first step has bias-corrected magnitude ~ lr") {
    ParameterSetT<double> params;
    params.add("p", TensorT<double>::from({1}, {0.0}));
    OptimizerT<double> opt;  // defaults: adam, lr 1e-3
    TensorT<double> g = TensorT<double>::from({1}, {0.37});
    opt.apply(params, {{"p", &g}});
    CHECK(std::abs(params.at("p")(0) + 0.001) < 1e-6);
  }

  SUBCASE("200 adam steps drive a quadratic to its minimum") {
    ParameterSetT<double> params;
    params.add("p", TensorT<double>::from({1}, {0.0}));
    OptimizerConfig cfg;
    cfg.learning_rate = 0.05;
    OptimizerT<double> opt(cfg);
    for (int i = 0; i < 200; ++i) {
      double p = params.at("p")(0);
      TensorT<double> g = TensorT<double>::from({1}, {2.0 * (p - 3.0)});
      opt.apply(params, {{"p", &g}});
    }
    CHECK(std::abs(params.at("p")(0) - 3.0) < 1e-2);
  }

  SUBCASE("non-finite gradient is rejected with the parameter name") {
    ParameterSetT<double> params;
    params.add("weights.0", TensorT<double>::from({1}, {1.0}));
    OptimizerT<double> opt;
    TensorT<double> g = TensorT<double>::from({1}, {std::nan("")});
    try {
      opt.apply(params, {{"weights.0", &g}});
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("weights.0") != std::string::npos);
    }
  }
}

TEST_CASE("TSTW container round trip is bit-exact") {
  ParameterSet params;
  Pcg32 rng(5);
  Tensorf a({3, 4});
  for (auto& v : a.data) v = static_cast<float>(rng.uniform(-10, 10));
  Tensorf b({2, 1, 3, 3});
  for (auto& v : b.data) v = static_cast<float>(rng.normal());
  params.add("layer0.weight", a);
  params.add("layer0.bias", b);

  std::string path = "roundtrip_test.tstw";
  save_tstw(params, path);
  ParameterSet back = load_tstw(path);

  REQUIRE(back.size() == params.size());
  CHECK(back.names() == params.names());
  for (const auto& name : params.names()) {
    const Tensorf& x = params.at(name);
    const Tensorf& y = back.at(name);
    REQUIRE(x.shape == y.shape);
    CHECK(std::memcmp(x.ptr(), y.ptr(), sizeof(float) * x.data.size()) == 0);
  }

  // rewriting produces byte-identical files
  std::string path2 = "roundtrip_test2.tstw";
  save_tstw(back, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());

  CHECK_THROWS_AS(load_tstw("does_not_exist.tstw"), std::runtime_error);
}
