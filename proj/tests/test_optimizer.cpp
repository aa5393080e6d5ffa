#include <cmath>

#include "cmos/optimizer.hpp"
#include "doctest.h"

using namespace cmos;

namespace {

ParamStore<double> single(double value) {
  ParamStore<double> p;
  p.add("w", Tensor<double>::from({value}));
  return p;
}

}  // namespace

TEST_CASE("sgd examples") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::sgd;
  cfg.learning_rate = 0.1;

  auto p = single(0.3);
  OptimizerState<double> st;
  optimizer_step(p, {Tensor<double>::from({0})}, st, cfg);
  CHECK(p.get("w")[0] == 0.3);

  auto q = single(0.0);
  OptimizerState<double> st2;
  optimizer_step(q, {Tensor<double>::from({1})}, st2, cfg);
  CHECK(q.get("w")[0] == doctest::Approx(-0.1));
}

TEST_CASE("sgd momentum accumulates velocity across steps") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::sgd;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.5;
  auto p = single(0.0);
  OptimizerState<double> st;
  optimizer_step(p, {Tensor<double>::from({1})}, st, cfg);
  optimizer_step(p, {Tensor<double>::from({1})}, st, cfg);
  // v1 = 1, v2 = 0.5 + 1 -> w = -0.1 - 0.15
  CHECK(p.get("w")[0] == doctest::Approx(-0.25));
  CHECK(st.step == 2);
}

TEST_CASE("adam single step matches a hand evaluation of the recurrences") {
  OptimizerConfig cfg;  // adam, lr 1e-3, betas (0.9, 0.999), eps 1e-8
  auto p = single(0.0);
  OptimizerState<double> st;
  optimizer_step(p, {Tensor<double>::from({1})}, st, cfg);

  const double m = (1 - 0.9) * 1.0, v = (1 - 0.999) * 1.0;
  const double m_hat = m / (1 - 0.9), v_hat = v / (1 - 0.999);
  const double expected = 0.0 - 1e-3 * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(p.get("w")[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.get("w")[0] == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("optimizer rejects non-finite gradients naming the parameter") {
  OptimizerConfig cfg;
  ParamStore<float> p;
  p.add("conv1.kernel", Tensor<float>::from({1, 2}));
  OptimizerState<float> st;
  try {
    optimizer_step(p, {Tensor<float>::from({1, std::nanf("")})}, st, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("conv1.kernel") != std::string::npos);
  }
  CHECK(p.get("conv1.kernel")[0] == 1.0f);
}

TEST_CASE("optimizer is deterministic") {
  auto run = [] {
    ParamStore<float> p;
    p.add("a", Tensor<float>::from({0.1f, -0.2f, 0.3f}));
    OptimizerState<float> st;
    OptimizerConfig cfg;
    for (int i = 0; i < 10; ++i) {
      optimizer_step(p, {Tensor<float>::from({0.5f * i, -1.0f, 0.25f})}, st, cfg);
    }
    return p.get("a");
  };
  CHECK(bitwise_equal(run(), run()));
}

TEST_CASE("optimizer argument validation") {
  auto p = single(1.0);
  OptimizerState<double> st;
  OptimizerConfig cfg;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(optimizer_step(p, {Tensor<double>::from({1})}, st, cfg), InvalidArgument);
  cfg.learning_rate = 0.1;
  CHECK_THROWS_AS(optimizer_step(p, {Tensor<double>::from({1, 2})}, st, cfg), ShapeError);
  CHECK_THROWS_AS(parse_optimizer_kind("rmsprop"), InvalidArgument);
}
