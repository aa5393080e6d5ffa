#include "cmos/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cmos {
namespace {

double evaluate(const ScalarFn& fn, const Tensor<double>& point) {
  Graph<double> g;
  auto x = g.leaf(point, false);
  auto y = fn(g, x);
  if (y.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  return y.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const Tensor<double>& point, double eps, double tolerance) {
  Tensor<double> analytic;
  {
    Graph<double> g;
    auto x = g.leaf(point, true);
    auto y = fn(g, x);
    g.backward(y);
    analytic = g.grad(x);
  }

  Tensor<double> probe = point;
  auto central = [&](std::size_t i, double h, double* scale) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = evaluate(fn, probe);
    probe[i] = orig - h;
    const double down = evaluate(fn, probe);
    probe[i] = orig;
    if (scale) *scale = std::max(std::abs(up), std::abs(down));
    return (up - down) / (2.0 * h);
  };
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)); };

  GradCheckResult result;
  GradCheckResult worst_kink;
  bool any = false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    double scale = 0;
    double numeric = central(i, eps, &scale);
    const double a = analytic[i];
    double err = rel(a, numeric);
    if (err > tolerance) {
      // A kink between eps/2 and eps leaves the half step clean.
      const double half = central(i, eps / 2, nullptr);
      if (rel(a, half) <= tolerance) {
        numeric = half;
        err = rel(a, half);
      } else {
        // Smooth f: the two estimates differ by O(eps^2) plus roundoff of order ulp(f)/eps.
        const double roundoff = 1e-15 * std::max(1.0, scale) / eps;
        const double spread = std::abs(numeric - half);
        if (spread > 1e-3 * (std::abs(numeric) + std::abs(half)) && spread > 100 * roundoff) {
          ++result.kinks;
          if (worst_kink.kinks == 0 || err > worst_kink.max_rel_error) worst_kink = {err, i, a, numeric, 1};
          continue;
        }
      }
    }
    if (!any || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
      any = true;
    }
  }
  if (result.kinks > std::max<std::size_t>(1, point.size() / 100)) {
    const std::size_t kinks = result.kinks;
    result = worst_kink;
    result.kinks = kinks;
  }
  return result;
}

}  // namespace cmos
