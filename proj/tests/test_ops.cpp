#include <cmath>
#include <numeric>

#include "cmos/ops.hpp"
#include "cmos/random.hpp"
#include "doctest.h"

using namespace cmos;

namespace {

// Direct-summation cross-correlation, independent of the im2col path.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, Padding padding) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), O = k.dim(3);
  const long pt = padding == Padding::same ? static_cast<long>((kh - 1) / 2) : 0;
  const long pl = padding == Padding::same ? static_cast<long>((kw - 1) / 2) : 0;
  const std::size_t Ho = padding == Padding::same ? H : H - kh + 1;
  const std::size_t Wo = padding == Padding::same ? W : W - kw + 1;
  Tensor<double> out({Ho, Wo, O});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = 0;
        for (std::size_t dy = 0; dy < kh; ++dy)
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const long iy = static_cast<long>(oy + dy) - pt, ix = static_cast<long>(ox + dx) - pl;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
            for (std::size_t c = 0; c < C; ++c)
              acc += x.at({static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c}) * k.at({dy, dx, c, o});
          }
        out.at({oy, ox, o}) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d examples") {
  Graph<double> g;
  SUBCASE("1x1 identity kernel over channels returns the input") {
    Rng rng(1);
    auto x = uniform_tensor<double>({4, 5, 3}, -1, 1, rng);
    Tensor<double> k({1, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) k.at({0, 0, c, c}) = 1;
    auto y = conv2d(g.constant(x), g.constant(k), Padding::same);
    CHECK(y.value() == x);
  }
  SUBCASE("zero kernel gives zeros") {
    Rng rng(2);
    auto x = uniform_tensor<double>({3, 3, 2}, -1, 1, rng);
    auto y = conv2d(g.constant(x), g.constant(Tensor<double>::zeros({3, 3, 2, 4})), Padding::same);
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("2x2 diagonal kernel, valid") {
    Tensor<double> x({2, 2, 1}, {1, 2, 3, 4});
    Tensor<double> k({2, 2, 1, 1}, {1, 0, 0, 1});
    auto y = conv2d(g.constant(x), g.constant(k), Padding::valid);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    CHECK(y.value()[0] == naive_conv(x, k, Padding::valid)[0]);
    CHECK(y.value()[0] == 5.0);
  }
}

TEST_CASE("conv2d matches direct summation on random inputs") {
  Rng rng(7);
  for (auto padding : {Padding::same, Padding::valid}) {
    for (std::size_t ks : {1u, 2u, 3u, 4u}) {
      auto x = uniform_tensor<double>({6, 5, 3}, -1, 1, rng);
      auto k = uniform_tensor<double>({ks, ks, 3, 2}, -1, 1, rng);
      Graph<double> g;
      auto y = conv2d(g.constant(x), g.constant(k), padding);
      auto ref = naive_conv(x, k, padding);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d same padding preserves spatial shape for any kernel size") {
  Graph<float> g;
  for (std::size_t kh = 1; kh <= 5; ++kh) {
    for (std::size_t kw = 1; kw <= 5; ++kw) {
      auto y = conv2d(g.constant(Tensor<float>({2, 7, 6, 2}, 1.0f)), g.constant(Tensor<float>({kh, kw, 2, 3}, 0.5f)),
                      Padding::same);
      CHECK(y.shape() == Shape{2, 7, 6, 3});
    }
  }
}

TEST_CASE("conv2d channel mismatch names both shapes") {
  Graph<float> g;
  auto x = g.constant(Tensor<float>({4, 4, 3}));
  auto k = g.constant(Tensor<float>({3, 3, 2, 1}));
  try {
    conv2d(x, k, Padding::same);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4,4,3]") != std::string::npos);
    CHECK(msg.find("[3,3,2,1]") != std::string::npos);
  }
}

TEST_CASE("maxpool2d examples") {
  Graph<double> g;
  auto y = maxpool2d(g.constant(Tensor<double>({2, 2, 1}, {1, 2, 3, 4})));
  CHECK(y.value() == Tensor<double>({1, 1, 1}, {4}));

  auto c = maxpool2d(g.constant(Tensor<double>({5, 3, 2}, 0.25)));
  CHECK(c.shape() == Shape{3, 2, 2});
  for (double v : c.value().data()) CHECK(v == 0.25);

  Tensor<double> nine({3, 3, 1});
  std::iota(nine.data().begin(), nine.data().end(), 1.0);
  // Windows: {1,2,4,5} {3,6} {7,8} {9}.
  CHECK(maxpool2d(g.constant(nine)).value() == Tensor<double>({2, 2, 1}, {5, 6, 8, 9}));
}

TEST_CASE("maxpool2d backward routes ties to the first index") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>({2, 2, 1}, {3, 3, 3, 3}));
  g.backward(sum(maxpool2d(x)));
  CHECK(g.grad(x) == Tensor<double>({2, 2, 1}, {1, 0, 0, 0}));
}

TEST_CASE("maxpool2d keeps 80x60 alive through four pools") {
  Graph<float> g;
  auto h = g.constant(Tensor<float>({1, 80, 60, 1}, 1.0f));
  for (int i = 0; i < 4; ++i) h = maxpool2d(h);
  CHECK(h.shape() == Shape{1, 5, 4, 1});
}

TEST_CASE("dense examples") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::from({1, 2}));
  auto eye = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto zero_b = g.constant(Tensor<double>::zeros({2}));
  CHECK(dense(x, eye, zero_b).value() == Tensor<double>::from({1, 2}));
  auto b = g.constant(Tensor<double>::from({0.5, -3}));
  CHECK(dense(x, g.constant(Tensor<double>::zeros({2, 2})), b).value() == Tensor<double>::from({0.5, -3}));
  // [1,2] x [[1,2],[3,4]] = [1+6, 2+8]
  CHECK(dense(x, g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4})), zero_b).value() == Tensor<double>::from({7, 10}));
  CHECK_THROWS_AS(dense(x, g.constant(Tensor<double>::zeros({3, 2})), zero_b), ShapeError);
}

TEST_CASE("relu examples and subgradient") {
  Graph<double> g;
  CHECK(relu(g.constant(Tensor<double>::from({-1, 0, 2}))).value() == Tensor<double>::from({0, 0, 2}));
  CHECK(relu(g.constant(Tensor<double>::from({-1, -2, -0.5}))).value() == Tensor<double>::zeros({3}));
  auto x = g.leaf(Tensor<double>::from({-1, 2}));
  g.backward(sum(relu(x)));
  CHECK(g.grad(x) == Tensor<double>::from({0, 1}));
  auto z = g.leaf(Tensor<double>::from({0}));
  g.backward(sum(relu(z)));
  CHECK(g.grad(z)[0] == 0.0);
}

TEST_CASE("softmax examples") {
  Graph<double> g;
  CHECK(softmax(g.constant(Tensor<double>::from({0, 0}))).value() == Tensor<double>::from({0.5, 0.5}));
  auto p = softmax(g.constant(Tensor<double>::from({1, 2}))).value();
  const double e1 = std::exp(1.0), e2 = std::exp(2.0);
  CHECK(p[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.26894).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.73106).epsilon(1e-5));

  Rng rng(11);
  auto x = uniform_tensor<double>({6}, -3, 3, rng);
  auto shifted = x;
  for (auto& v : shifted.data()) v += 17.25;
  auto a = softmax(g.constant(x)).value(), b = softmax(g.constant(shifted)).value();
  for (std::size_t i = 0; i < 6; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and preserves argmax") {
  Rng rng(5);
  std::uniform_int_distribution<int> len(1, 12);
  for (int trial = 0; trial < 500; ++trial) {
    Graph<float> g;
    auto x = uniform_tensor<float>({static_cast<std::size_t>(len(rng))}, -20, 20, rng);
    auto y = softmax(g.constant(x)).value();
    double total = 0;
    for (float v : y.data()) {
      CHECK(v > 0.0f);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
    auto xm = std::max_element(x.data().begin(), x.data().end()) - x.data().begin();
    auto ym = std::max_element(y.data().begin(), y.data().end()) - y.data().begin();
    CHECK(xm == ym);
  }
}

TEST_CASE("softmax along a non-final axis") {
  Graph<double> g;
  auto y = softmax(g.constant(Tensor<double>({2, 2}, {0, 1, 0, 1})), 0).value();
  CHECK(y == Tensor<double>({2, 2}, {0.5, 0.5, 0.5, 0.5}));
}

TEST_CASE("cross_entropy_loss examples") {
  Graph<double> g;
  const int label0[] = {0};
  const int label2[] = {2};
  CHECK(cross_entropy_loss(g.constant(Tensor<double>({1, 4}, 0.3)), std::span<const int>(label2)).value()[0] ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(cross_entropy_loss(g.constant(Tensor<double>({1, 4}, {0, 0, 1e6, 0})), std::span<const int>(label2))
            .value()[0] == doctest::Approx(0.0));
  // -log(e / (e + 3))
  const double expected = std::log(std::exp(1.0) + 3.0) - 1.0;
  CHECK(cross_entropy_loss(g.constant(Tensor<double>({1, 4}, {1, 0, 0, 0})), std::span<const int>(label0))
            .value()[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.743668).epsilon(1e-6));

  const int bad[] = {4};
  CHECK_THROWS_AS(cross_entropy_loss(g.constant(Tensor<double>({1, 4})), std::span<const int>(bad)),
                  InvalidArgument);
}

TEST_CASE("cross_entropy_loss gradient is (softmax - onehot) / B") {
  Graph<double> g;
  auto z = g.leaf(Tensor<double>({2, 4}, {1, 0, 0, 0, 0.5, -1, 2, 0}));
  const int labels[] = {0, 2};
  g.backward(cross_entropy_loss(z, std::span<const int>(labels)));
  auto grad = g.grad(z);
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> row(z.value().data().begin() + b * 4, z.value().data().begin() + b * 4 + 4);
    auto p = softmax_values(std::span<const double>(row));
    for (std::size_t c = 0; c < 4; ++c) {
      const double onehot = static_cast<int>(c) == labels[b] ? 1.0 : 0.0;
      CHECK(grad[b * 4 + c] == doctest::Approx((p[c] - onehot) / 2.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward examples") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>({2, 3}, 0.7));
  g.backward(sum(x));
  CHECK(g.grad(x) == Tensor<double>({2, 3}, 1.0));

  auto q = g.leaf(Tensor<double>::from({1, 2}));
  g.backward(sum(mul(q, q)));
  CHECK(g.grad(q) == Tensor<double>::from({2, 4}));

  CHECK_THROWS_AS(g.backward(q), ShapeError);
}

TEST_CASE("backward through fan-out sums branch gradients") {
  Rng rng(3);
  auto x0 = uniform_tensor<double>({5}, -1, 1, rng);
  auto w = uniform_tensor<double>({5}, -1, 1, rng);

  auto branch_a = [&](Graph<double>&, Var<double> x) { return sum(mul(x, x)); };
  auto branch_b = [&](Graph<double>& g, Var<double> x) { return sum(mul(relu(x), g.constant(w))); };

  Graph<double> g;
  auto x = g.leaf(x0);
  g.backward(add(branch_a(g, x), branch_b(g, x)));
  auto both = g.grad(x);

  Graph<double> ga, gb;
  auto xa = ga.leaf(x0), xb = gb.leaf(x0);
  ga.backward(branch_a(ga, xa));
  gb.backward(branch_b(gb, xb));
  for (std::size_t i = 0; i < 5; ++i) CHECK(both[i] == doctest::Approx(ga.grad(xa)[i] + gb.grad(xb)[i]));
}

TEST_CASE("forward and backward are bit-reproducible in 32-bit") {
  auto run = [] {
    Rng rng(42);
    Graph<float> g;
    auto x = g.leaf(uniform_tensor<float>({2, 9, 7, 3}, -1, 1, rng));
    auto k = g.leaf(uniform_tensor<float>({3, 3, 3, 4}, -1, 1, rng));
    auto h = maxpool2d(relu(conv2d(x, k, Padding::same)));
    auto flat = reshape(h, Shape{2, shape_numel(h.shape()) / 2});
    auto w = g.leaf(uniform_tensor<float>({flat.shape()[1], 4}, -1, 1, rng));
    auto b = g.leaf(uniform_tensor<float>({4}, -1, 1, rng));
    const int labels[] = {1, 3};
    auto loss = cross_entropy_loss(dense(flat, w, b), std::span<const int>(labels));
    g.backward(loss);
    return std::make_tuple(loss.value(), g.grad(x), g.grad(k), g.grad(w));
  };
  auto a = run(), b = run();
  CHECK(bitwise_equal(std::get<0>(a), std::get<0>(b)));
  CHECK(bitwise_equal(std::get<1>(a), std::get<1>(b)));
  CHECK(bitwise_equal(std::get<2>(a), std::get<2>(b)));
  CHECK(bitwise_equal(std::get<3>(a), std::get<3>(b)));
}

TEST_CASE("checked mode rejects non-finite values at op boundaries") {
  Graph<float> g;
  g.set_checked(true);
  CHECK_THROWS_AS(g.leaf(Tensor<float>::from({std::numeric_limits<float>::quiet_NaN()})), NumericError);
  auto x = g.leaf(Tensor<float>::from({1e30f}));
  CHECK_THROWS_AS(mul(x, x), NumericError);
}
