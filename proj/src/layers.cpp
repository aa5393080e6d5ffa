#include "cmos/layers.hpp"

#include <algorithm>
#include <cmath>

namespace cmos {
namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight on hi; zero means the tap sits exactly on lo
};

// Exact integer positioning: tap j reads source j*(N0-1)/(N-1).
std::vector<Tap> interpolation_taps(std::size_t native, std::size_t frames) {
  std::vector<Tap> taps(frames);
  for (std::size_t j = 0; j < frames; ++j) {
    const std::size_t num = j * (native - 1);
    const std::size_t lo = num / (frames - 1);
    const std::size_t rem = num % (frames - 1);
    taps[j] = {lo, std::min(lo + 1, native - 1), static_cast<double>(rem) / static_cast<double>(frames - 1)};
  }
  return taps;
}

void check_kernel(const Shape& s) {
  if (s.size() != 4 || s[0] != 1 || s[1] != 1 || s[2] < 2) {
    throw ShapeError("conv-KI kernel must be [1,1,N0>=2,n_o], got " + shape_string(s));
  }
}

void check_frames(std::size_t frames) {
  if (frames < 2) throw ShapeError("conv-KI needs at least 2 frames, got " + std::to_string(frames));
}

}  // namespace

std::string to_string(NLScope scope) { return scope == NLScope::segment ? "segment" : "subject"; }

std::size_t embedding_width(std::size_t channels) { return std::max<std::size_t>(1, channels / 2); }

template <Real T>
Tensor<T> interpolate_kernel(const Tensor<T>& k0, std::size_t frames) {
  check_kernel(k0.shape());
  check_frames(frames);
  const std::size_t native = k0.dim(2), outputs = k0.dim(3);
  if (frames == native) return k0;
  Tensor<T> out(Shape{1, 1, frames, outputs});
  const auto taps = interpolation_taps(native, frames);
  for (std::size_t j = 0; j < frames; ++j) {
    const auto& tap = taps[j];
    const T w = static_cast<T>(tap.frac);
    for (std::size_t c = 0; c < outputs; ++c) {
      const T a = k0[tap.lo * outputs + c];
      out[j * outputs + c] = tap.frac == 0.0 ? a : (T(1) - w) * a + w * k0[tap.hi * outputs + c];
    }
  }
  return out;
}

template <Real T>
Var<T> interpolate_kernel(Var<T> k0, std::size_t frames) {
  auto& g = *k0.graph;
  Tensor<T> out = interpolate_kernel(k0.value(), frames);
  const std::size_t native = k0.value().dim(2), outputs = k0.value().dim(3);
  return g.record("interpolate_kernel", std::move(out), {k0},
                  [k0, native, outputs, frames](Graph<T>& g, const Tensor<T>& go) {
                    auto& gk = g.grad_buffer(k0);
                    if (frames == native) {
                      for (std::size_t i = 0; i < go.size(); ++i) gk[i] += go[i];
                      return;
                    }
                    const auto taps = interpolation_taps(native, frames);
                    for (std::size_t j = 0; j < frames; ++j) {
                      const auto& tap = taps[j];
                      const T w = static_cast<T>(tap.frac);
                      for (std::size_t c = 0; c < outputs; ++c) {
                        const T d = go[j * outputs + c];
                        if (tap.frac == 0.0) {
                          gk[tap.lo * outputs + c] += d;
                        } else {
                          gk[tap.lo * outputs + c] += (T(1) - w) * d;
                          gk[tap.hi * outputs + c] += w * d;
                        }
                      }
                    }
                  });
}

template <Real T>
Var<T> conv_ki_forward(Var<T> x, Var<T> k0) {
  const Shape xs = x.shape();
  check_kernel(k0.shape());
  if (xs.size() != 3 && xs.size() != 4) {
    throw ShapeError("conv-KI input must be [r,a,N] or [B,r,a,N], got " + shape_string(xs));
  }
  const std::size_t frames = xs.back();
  check_frames(frames);
  const std::size_t outputs = k0.shape()[3];
  const std::size_t positions = shape_numel(xs) / frames;

  auto kernel = reshape(interpolate_kernel(k0, frames), Shape{frames, outputs});
  auto flat = reshape(x, Shape{positions, frames});
  Shape out_shape = xs;
  out_shape.back() = outputs;
  return reshape(matmul(flat, kernel), std::move(out_shape));
}

template <Real T>
NLBlockParams<T> init_nl_block(std::size_t channels, NLScope scope, Rng& rng) {
  const std::size_t ce = embedding_width(channels);
  const double bound = std::sqrt(3.0 / static_cast<double>(channels));
  NLBlockParams<T> p;
  p.phi_w = uniform_tensor<T>({channels, ce}, -bound, bound, rng);
  p.psi_w = uniform_tensor<T>({channels, ce}, -bound, bound, rng);
  p.g_w = uniform_tensor<T>({channels, ce}, -bound, bound, rng);
  p.theta_w = Tensor<T>::zeros({ce, channels});
  p.scope = scope;
  return p;
}

template <Real T>
NLBlockVars<T> bind(Graph<T>& g, const NLBlockParams<T>& params, bool requires_grad) {
  return {g.leaf(params.phi_w, requires_grad), g.leaf(params.psi_w, requires_grad),
          g.leaf(params.g_w, requires_grad), g.leaf(params.theta_w, requires_grad), params.scope};
}

template <Real T>
Var<T> nl_attention(Var<T> x, Var<T> phi_w, Var<T> psi_w) {
  const auto rank = x.shape().size();
  if (rank != 2 && rank != 3) throw ShapeError("nl_attention: positions must be [P,C] or [G,P,C]");
  auto phi = matmul(x, phi_w);
  auto psi = matmul(x, psi_w);
  // Row-wise softmax of the embedded-Gaussian exponents: the max subtraction cancels
  // in the normalization, so this equals exp(.)/C(x) exactly in real arithmetic.
  return softmax(matmul(phi, psi, /*transpose_b=*/true), -1);
}

template <Real T>
Var<T> nl_block_forward(Var<T> x, const NLBlockVars<T>& params) {
  const Shape xs = x.shape();
  if (xs.size() != 4) throw ShapeError("nl_block_forward: expected [B,H,W,C], got " + shape_string(xs));
  const std::size_t batch = xs[0], positions = xs[1] * xs[2], channels = xs[3];
  const auto& pw = params.phi_w.value();
  if (pw.rank() != 2 || pw.dim(0) != channels) {
    throw ShapeError("nl_block_forward: projection " + shape_string(pw.shape()) +
                     " does not match input channels of " + shape_string(xs));
  }
  const Shape grouped = params.scope == NLScope::segment ? Shape{batch, positions, channels}
                                                         : Shape{1, batch * positions, channels};
  auto xg = reshape(x, grouped);
  auto weights = nl_attention(xg, params.phi_w, params.psi_w);
  auto y = matmul(weights, matmul(xg, params.g_w));
  auto z = add(matmul(y, params.theta_w), xg);
  return reshape(z, xs);
}

#define CMOS_INSTANTIATE_LAYERS(T)                                                     \
  template Tensor<T> interpolate_kernel(const Tensor<T>&, std::size_t);                \
  template Var<T> interpolate_kernel(Var<T>, std::size_t);                             \
  template Var<T> conv_ki_forward(Var<T>, Var<T>);                                     \
  template NLBlockParams<T> init_nl_block(std::size_t, NLScope, Rng&);                 \
  template NLBlockVars<T> bind(Graph<T>&, const NLBlockParams<T>&, bool);              \
  template Var<T> nl_attention(Var<T>, Var<T>, Var<T>);                                \
  template Var<T> nl_block_forward(Var<T>, const NLBlockVars<T>&);

CMOS_INSTANTIATE_LAYERS(float)
CMOS_INSTANTIATE_LAYERS(double)

}  // namespace cmos
