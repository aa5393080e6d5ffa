#include "cmos/gradcheck.hpp"
#include "cmos/ops.hpp"
#include "cmos/random.hpp"
#include "doctest.h"

using namespace cmos;

namespace {

// Contracts an op output with a fixed random tensor so every output coordinate
// contributes a distinct weight to the scalar.
Var<double> project(Graph<double>& g, Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(uniform_tensor<double>(y.shape(), -1, 1, rng))));
}

constexpr double kTolerance = 1e-4;
constexpr int kPoints = 5;

}  // namespace

TEST_CASE("grad_check is exact for linear maps") {
  Rng rng(1);
  auto w = uniform_tensor<double>({7}, -2, 2, rng);
  auto fn = [&](Graph<double>& g, Var<double> x) { return sum(mul(x, g.constant(w))); };
  auto r = grad_check(fn, uniform_tensor<double>({7}, -1, 1, rng));
  CHECK(r.max_rel_error <= 1e-9);
}

TEST_CASE("grad_check flags a wrong gradient") {
  // Identity op whose backward rule doubles the gradient.
  auto wrong = [](Graph<double>& g, Var<double> x) {
    auto y = g.record("bogus", x.value(), {x}, [x](Graph<double>& g, const Tensor<double>& go) {
      auto& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += 2 * go[i];
    });
    return sum(y);
  };
  auto r = grad_check(wrong, Tensor<double>::from({0.5, -0.7}));
  CHECK(r.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("grad_check handles ReLU kinks near the probe") {
  auto fn = [](Graph<double>&, Var<double> x) { return sum(relu(x)); };
  SUBCASE("kink between eps/2 and eps passes on the half step") {
    auto r = grad_check(fn, Tensor<double>::from({7e-5, 0.4, -0.3}));
    CHECK(r.kinks == 0);
    CHECK(r.max_rel_error <= 1e-9);
  }
  SUBCASE("kink inside eps/2 is skipped and counted") {
    // Central differences give 0.65 and 0.8 against an analytic 1.
    auto r = grad_check(fn, Tensor<double>::from({3e-5, 0.4, -0.3}));
    CHECK(r.kinks == 1);
    CHECK(r.max_rel_error <= 1e-9);
  }
  SUBCASE("too many kinks fail the check") {
    auto r = grad_check(fn, Tensor<double>({10}, 3e-5));
    CHECK(r.kinks == 10);
    CHECK(r.max_rel_error == doctest::Approx(0.35 / 1.65).epsilon(1e-6));
  }
  SUBCASE("a wrong gradient is not mistaken for a kink") {
    auto doubled = [](Graph<double>& g, Var<double> x) {
      auto y = g.record("bogus", relu(x).value(), {x}, [x](Graph<double>& g, const Tensor<double>& go) {
        auto& gx = g.grad_buffer(x);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += x.value()[i] > 0 ? 2 * go[i] : 0.0;
      });
      return sum(y);
    };
    auto r = grad_check(doubled, Tensor<double>::from({3e-5, 0.4, -0.3}));
    CHECK(r.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
}

TEST_CASE("every differentiable op passes grad_check at seeded random points") {
  for (int point = 0; point < kPoints; ++point) {
    Rng rng(1000 + static_cast<std::uint64_t>(point));
    const auto seed = static_cast<std::uint64_t>(point) * 31 + 7;
    CAPTURE(point);

    auto kernel = uniform_tensor<double>({3, 3, 2, 3}, -1, 1, rng);
    auto image = uniform_tensor<double>({2, 5, 4, 2}, -1, 1, rng);
    {  // conv2d wrt input (same)
      auto fn = [&](Graph<double>& g, Var<double> x) {
        return project(g, conv2d(x, g.constant(kernel), Padding::same), seed);
      };
      CHECK(grad_check(fn, image).max_rel_error <= kTolerance);
    }
    {  // conv2d wrt kernel (valid)
      auto fn = [&](Graph<double>& g, Var<double> k) {
        return project(g, conv2d(g.constant(image), k, Padding::valid), seed);
      };
      CHECK(grad_check(fn, kernel).max_rel_error <= kTolerance);
    }
    {  // maxpool2d
      auto x = uniform_tensor<double>({3, 5, 2}, -1, 1, rng);
      auto fn = [&](Graph<double>& g, Var<double> v) { return project(g, maxpool2d(v), seed); };
      CHECK(grad_check(fn, x).max_rel_error <= kTolerance);
    }
    {  // relu
      auto x = uniform_tensor<double>({9}, -1, 1, rng);
      auto fn = [&](Graph<double>& g, Var<double> v) { return project(g, relu(v), seed); };
      CHECK(grad_check(fn, x).max_rel_error <= kTolerance);
    }
    {  // dense wrt input, weights and bias
      auto x = uniform_tensor<double>({3, 4}, -1, 1, rng);
      auto w = uniform_tensor<double>({4, 5}, -1, 1, rng);
      auto b = uniform_tensor<double>({5}, -1, 1, rng);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, dense(v, g.constant(w), g.constant(b)), seed);
            }, x).max_rel_error <= kTolerance);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, dense(g.constant(x), v, g.constant(b)), seed);
            }, w).max_rel_error <= kTolerance);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, dense(g.constant(x), g.constant(w), v), seed);
            }, b).max_rel_error <= kTolerance);
    }
    {  // matmul with transposed and grouped operands
      auto a = uniform_tensor<double>({2, 3, 4}, -1, 1, rng);
      auto b = uniform_tensor<double>({2, 5, 4}, -1, 1, rng);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, matmul(v, g.constant(b), true), seed);
            }, a).max_rel_error <= kTolerance);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, matmul(g.constant(a), v, true), seed);
            }, b).max_rel_error <= kTolerance);
      auto shared = uniform_tensor<double>({4, 3}, -1, 1, rng);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, matmul(g.constant(a), v), seed);
            }, shared).max_rel_error <= kTolerance);
    }
    {  // softmax along both axes
      auto x = uniform_tensor<double>({3, 4}, -2, 2, rng);
      for (int axis : {0, -1}) {
        CHECK(grad_check([&](Graph<double>& g, Var<double> v) { return project(g, softmax(v, axis), seed); }, x)
                  .max_rel_error <= kTolerance);
      }
    }
    {  // cross entropy
      auto x = uniform_tensor<double>({3, 4}, -2, 2, rng);
      const int labels[] = {0, 3, 1};
      CHECK(grad_check([&](Graph<double>&, Var<double> v) {
              return cross_entropy_loss(v, std::span<const int>(labels));
            }, x).max_rel_error <= kTolerance);
    }
    {  // add_bias
      auto x = uniform_tensor<double>({2, 3, 4}, -1, 1, rng);
      auto b = uniform_tensor<double>({4}, -1, 1, rng);
      CHECK(grad_check([&](Graph<double>& g, Var<double> v) {
              return project(g, add_bias(g.constant(x), v), seed);
            }, b).max_rel_error <= kTolerance);
    }
  }
}

TEST_CASE("composite conv -> relu -> dense loss matches finite differences") {
  Rng rng(77);
  auto kernel = uniform_tensor<double>({3, 3, 1, 2}, -1, 1, rng);
  auto w = uniform_tensor<double>({4 * 3 * 2, 4}, -1, 1, rng);
  auto b = uniform_tensor<double>({4}, -1, 1, rng);
  const int label[] = {2};
  auto fn = [&](Graph<double>& g, Var<double> x) {
    auto h = relu(conv2d(x, g.constant(kernel), Padding::same));
    auto logits = dense(reshape(h, Shape{1, 24}), g.constant(w), g.constant(b));
    return cross_entropy_loss(logits, std::span<const int>(label));
  };
  CHECK(grad_check(fn, uniform_tensor<double>({4, 3, 1}, -1, 1, rng)).max_rel_error <= kTolerance);
}
