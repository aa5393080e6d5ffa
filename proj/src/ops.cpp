#include "cmos/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace cmos {
namespace {

template <Real T>
Graph<T>& graph_of(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = vars.begin()->graph;
  for (const auto& v : vars) {
    if (v.graph != g || g == nullptr) throw Error("operands belong to different graphs");
  }
  return *g;
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <Real T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m,n] += op(A) * op(B) with row-major operands.
// trans_a: A stored [k,m]; trans_b: B stored [n,k].
template <Real T>
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
              const T* a, const T* b, T* c) {
  using Index = Eigen::Index;
  using ConstMap = Eigen::Map<const RowMatrix<T>>;
  Eigen::Map<RowMatrix<T>> cm(c, static_cast<Index>(m), static_cast<Index>(n));
  const auto mi = static_cast<Index>(m), ni = static_cast<Index>(n), ki = static_cast<Index>(k);
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ki, ni);
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ni, ki).transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ki, ni);
  } else {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ni, ki).transpose();
  }
}

struct ImageDims {
  std::size_t batch, height, width, channels;
};

ImageDims image_dims(const char* op, const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw ShapeError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " + shape_string(s));
}

Shape image_shape(bool batched, const ImageDims& d) {
  if (batched) return {d.batch, d.height, d.width, d.channels};
  return {d.height, d.width, d.channels};
}

}  // namespace

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = graph_of({a, b});
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& go) {
    for (auto v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto& gv = g.grad_buffer(v);
      for (std::size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
    }
  });
}

template <Real T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = graph_of({a, b});
  require_same_shape("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& go) {
    if (g.requires_grad(a)) {
      auto& ga = g.grad_buffer(a);
      const auto& bv = g.value(b);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad_buffer(b);
      const auto& av = g.value(a);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <Real T>
Var<T> scale(Var<T> a, T factor) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return g.record("scale", std::move(out), {a}, [a, factor](Graph<T>& g, const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
  });
}

template <Real T>
Var<T> sum(Var<T> a) {
  auto& g = *a.graph;
  T total = 0;
  for (T v : a.value().data()) total += v;
  return g.record("sum", Tensor<T>(Shape{1}, total), {a}, [a](Graph<T>& g, const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    for (auto& v : ga.data()) v += go[0];
  });
}

template <Real T>
Var<T> reshape(Var<T> a, Shape shape) {
  auto& g = *a.graph;
  return g.record("reshape", a.value().reshaped(std::move(shape)), {a},
                  [a](Graph<T>& g, const Tensor<T>& go) {
                    auto& ga = g.grad_buffer(a);
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  });
}

template <Real T>
Var<T> relu(Var<T> a) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return g.record("relu", std::move(out), {a}, [a](Graph<T>& g, const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    const auto& av = g.value(a);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (av[i] > T(0)) ga[i] += go[i];
    }
  });
}

template <Real T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  auto& g = graph_of({x, bias});
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || xv.shape().back() != bv.dim(0)) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " does not match input " +
                     shape_string(xv.shape()));
  }
  const std::size_t c = bv.dim(0);
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  return g.record("add_bias", std::move(out), {x, bias}, [x, bias, c](Graph<T>& g, const Tensor<T>& go) {
    if (g.requires_grad(x)) {
      auto& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (g.requires_grad(bias)) {
      auto& gb = g.grad_buffer(bias);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i % c] += go[i];
    }
  });
}

template <Real T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Padding padding) {
  auto& g = graph_of({input, kernel});
  const auto& x = input.value();
  const auto& k = kernel.value();
  const bool batched = x.rank() == 4;
  const ImageDims in = image_dims("conv2d", x.shape());
  if (k.rank() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_string(k.shape()));
  const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  if (k.dim(2) != in.channels) {
    throw ShapeError("conv2d: input channels of " + shape_string(x.shape()) +
                     " do not match kernel " + shape_string(k.shape()));
  }
  std::size_t pad_top = 0, pad_left = 0;
  ImageDims out_d{in.batch, 0, 0, cout};
  if (padding == Padding::same) {
    pad_top = (kh - 1) / 2;
    pad_left = (kw - 1) / 2;
    out_d.height = in.height;
    out_d.width = in.width;
  } else {
    if (kh > in.height || kw > in.width) {
      throw ShapeError("conv2d: kernel " + shape_string(k.shape()) + " larger than input " +
                       shape_string(x.shape()));
    }
    out_d.height = in.height - kh + 1;
    out_d.width = in.width - kw + 1;
  }

  // im2col: one row per output pixel holding its receptive field as [kh,kw,Cin],
  // which matches the kernel's row-major [kh*kw*Cin, Cout] view. Out-of-image taps
  // stay zero. `scatter` runs the inverse mapping for the input gradient.
  const std::size_t rows = in.batch * out_d.height * out_d.width;
  const std::size_t patch = kh * kw * in.channels;
  auto walk = [=](auto&& fn) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      for (std::size_t oy = 0; oy < out_d.height; ++oy) {
        for (std::size_t ox = 0; ox < out_d.width; ++ox) {
          const std::size_t row = (b * out_d.height + oy) * out_d.width + ox;
          for (std::size_t dy = 0; dy < kh; ++dy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.height)) continue;
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(pad_left);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.width)) continue;
              const std::size_t in_off = ((b * in.height + static_cast<std::size_t>(iy)) * in.width +
                                          static_cast<std::size_t>(ix)) * in.channels;
              fn(in_off, row * patch + (dy * kw + dx) * in.channels);
            }
          }
        }
      }
    }
  };

  std::vector<T> cols(rows * patch, T(0));
  {
    const T* xp = x.data().data();
    const std::size_t cin = in.channels;
    walk([&](std::size_t in_off, std::size_t col_off) { std::copy_n(xp + in_off, cin, cols.data() + col_off); });
  }
  Tensor<T> out(image_shape(batched, out_d));
  gemm_acc(false, false, rows, cout, patch, cols.data(), k.data().data(), out.data().data());

  return g.record("conv2d", std::move(out), {input, kernel},
                  [input, kernel, walk, cols = std::move(cols), rows, patch, cout,
                   cin = in.channels](Graph<T>& g, const Tensor<T>& go) {
                    const T* gop = go.data().data();
                    if (g.requires_grad(kernel)) {
                      // dK = cols^T * dOut
                      gemm_acc(true, false, patch, cout, rows, cols.data(), gop,
                               g.grad_buffer(kernel).data().data());
                    }
                    if (g.requires_grad(input)) {
                      // dCols = dOut * K^T, then scatter-add back to the image.
                      std::vector<T> gcols(rows * patch, T(0));
                      gemm_acc(false, true, rows, patch, cout, gop, g.value(kernel).data().data(), gcols.data());
                      T* gx = g.grad_buffer(input).data().data();
                      walk([&](std::size_t in_off, std::size_t col_off) {
                        for (std::size_t c = 0; c < cin; ++c) gx[in_off + c] += gcols[col_off + c];
                      });
                    }
                  });
}

template <Real T>
Var<T> maxpool2d(Var<T> input) {
  auto& g = *input.graph;
  const auto& x = input.value();
  const bool batched = x.rank() == 4;
  const ImageDims in = image_dims("maxpool2d", x.shape());
  const ImageDims od{in.batch, (in.height + 1) / 2, (in.width + 1) / 2, in.channels};
  Tensor<T> out(image_shape(batched, od));
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t oy = 0; oy < od.height; ++oy) {
      for (std::size_t ox = 0; ox < od.width; ++ox) {
        for (std::size_t c = 0; c < in.channels; ++c) {
          std::size_t best = 0;
          T best_v = -std::numeric_limits<T>::infinity();
          bool first = true;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            const std::size_t iy = 2 * oy + dy;
            if (iy >= in.height) break;
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t ix = 2 * ox + dx;
              if (ix >= in.width) break;
              const std::size_t idx = ((b * in.height + iy) * in.width + ix) * in.channels + c;
              if (first || x[idx] > best_v) {
                best = idx;
                best_v = x[idx];
                first = false;
              }
            }
          }
          const std::size_t o = ((b * od.height + oy) * od.width + ox) * in.channels + c;
          out[o] = best_v;
          argmax[o] = best;
        }
      }
    }
  }
  return g.record("maxpool2d", std::move(out), {input},
                  [input, argmax = std::move(argmax)](Graph<T>& g, const Tensor<T>& go) {
                    auto& gx = g.grad_buffer(input);
                    for (std::size_t o = 0; o < go.size(); ++o) gx[argmax[o]] += go[o];
                  });
}

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b) {
  auto& g = graph_of({a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 2 || av.rank() > 3 || bv.rank() < 2 || bv.rank() > 3 || bv.rank() > av.rank()) {
    throw ShapeError("matmul: unsupported operand ranks " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  const bool grouped = av.rank() == 3;
  const bool shared_b = bv.rank() == 2;
  const std::size_t groups = grouped ? av.dim(0) : 1;
  const std::size_t m = av.dim(av.rank() - 2), k = av.dim(av.rank() - 1);
  const std::size_t bk = transpose_b ? bv.dim(bv.rank() - 1) : bv.dim(bv.rank() - 2);
  const std::size_t n = transpose_b ? bv.dim(bv.rank() - 2) : bv.dim(bv.rank() - 1);
  if (bk != k || (!shared_b && bv.dim(0) != groups)) {
    throw ShapeError("matmul: shape mismatch " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  Shape out_shape = grouped ? Shape{groups, m, n} : Shape{m, n};
  Tensor<T> out(out_shape);
  const std::size_t b_stride = shared_b ? 0 : k * n;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    gemm_acc(false, transpose_b, m, n, k, av.data().data() + gi * m * k,
             bv.data().data() + gi * b_stride, out.data().data() + gi * m * n);
  }
  return g.record("matmul", std::move(out), {a, b},
                  [=](Graph<T>& g, const Tensor<T>& go) {
                    const T* gop = go.data().data();
                    const T* ap = g.value(a).data().data();
                    const T* bp = g.value(b).data().data();
                    if (g.requires_grad(a)) {
                      T* ga = g.grad_buffer(a).data().data();
                      // dA = dC * op(B)^T
                      for (std::size_t gi = 0; gi < groups; ++gi) {
                        gemm_acc(false, !transpose_b, m, k, n, gop + gi * m * n, bp + gi * b_stride,
                                 ga + gi * m * k);
                      }
                    }
                    if (g.requires_grad(b)) {
                      T* gb = g.grad_buffer(b).data().data();
                      for (std::size_t gi = 0; gi < groups; ++gi) {
                        if (transpose_b) {
                          // B stored [n,k]: dB = dC^T * A
                          gemm_acc(true, false, n, k, m, gop + gi * m * n, ap + gi * m * k,
                                   gb + gi * b_stride);
                        } else {
                          // dB = A^T * dC
                          gemm_acc(true, false, k, n, m, ap + gi * m * k, gop + gi * m * n,
                                   gb + gi * b_stride);
                        }
                      }
                    }
                  });
}

template <Real T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias) {
  const auto& x = input.value();
  const auto& w = weights.value();
  const auto& b = bias.value();
  if (x.rank() < 1 || x.rank() > 2 || w.rank() != 2 || b.rank() != 1 ||
      x.shape().back() != w.dim(0) || w.dim(1) != b.dim(0)) {
    throw ShapeError("dense: dimension mismatch input " + shape_string(x.shape()) + ", weights " +
                     shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  }
  if (x.rank() == 1) {
    auto row = reshape(input, Shape{1, x.dim(0)});
    return reshape(add_bias(matmul(row, weights), bias), Shape{w.dim(1)});
  }
  return add_bias(matmul(input, weights), bias);
}

template <Real T>
Var<T> softmax(Var<T> input, int axis) {
  auto& g = *input.graph;
  const auto& x = input.value();
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) throw ShapeError("softmax: axis out of range for " + shape_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = ax + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  const std::size_t len = x.dim(static_cast<std::size_t>(ax));

  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  }
  // The node about to be recorded; its backward reads the softmax output in place.
  const Var<T> self{&g, g.size()};
  return g.record("softmax", std::move(y), {input},
                  [input, self, outer, inner, len](Graph<T>& g, const Tensor<T>& go) {
                    const auto& yv = g.value(self);
                    auto& gx = g.grad_buffer(input);
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t base = o * len * inner + in;
                        T dot = 0;
                        for (std::size_t j = 0; j < len; ++j) dot += go[base + j * inner] * yv[base + j * inner];
                        for (std::size_t j = 0; j < len; ++j) {
                          const std::size_t i = base + j * inner;
                          gx[i] += yv[i] * (go[i] - dot);
                        }
                      }
                    }
                  });
}

template <Real T>
Var<T> cross_entropy_loss(Var<T> logits, std::span<const int> labels) {
  auto& g = *logits.graph;
  const auto& z = logits.value();
  if (z.rank() < 1 || z.rank() > 2) throw ShapeError("cross_entropy_loss: logits must be [B,K] or [K]");
  const std::size_t batch = z.rank() == 2 ? z.dim(0) : 1;
  const std::size_t classes = z.shape().back();
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InvalidArgument("cross_entropy_loss: label " + std::to_string(label) + " outside [0," +
                            std::to_string(classes) + ")");
    }
  }
  Tensor<T> probs(Shape{batch, classes});
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z.data().data() + b * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    const T log_total = std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - mx - log_total);
    loss -= row[labels[b]] - mx - log_total;
  }
  loss /= static_cast<T>(batch);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return g.record("cross_entropy_loss", Tensor<T>(Shape{1}, loss), {logits},
                  [logits, probs = std::move(probs), label_copy = std::move(label_copy), batch,
                   classes](Graph<T>& g, const Tensor<T>& go) {
                    auto& gz = g.grad_buffer(logits);
                    const T s = go[0] / static_cast<T>(batch);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t c = 0; c < classes; ++c) {
                        const T onehot = static_cast<int>(c) == label_copy[b] ? T(1) : T(0);
                        gz[b * classes + c] += (probs[b * classes + c] - onehot) * s;
                      }
                    }
                  });
}

template <Real T>
std::vector<T> softmax_values(std::span<const T> logits) {
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += (out[i] = std::exp(logits[i] - mx));
  for (auto& v : out) v /= total;
  return out;
}

#define CMOS_INSTANTIATE_OPS(T)                                                   \
  template Var<T> add(Var<T>, Var<T>);                                            \
  template Var<T> mul(Var<T>, Var<T>);                                            \
  template Var<T> scale(Var<T>, T);                                               \
  template Var<T> sum(Var<T>);                                                    \
  template Var<T> reshape(Var<T>, Shape);                                         \
  template Var<T> relu(Var<T>);                                                   \
  template Var<T> add_bias(Var<T>, Var<T>);                                       \
  template Var<T> conv2d(Var<T>, Var<T>, Padding);                                \
  template Var<T> maxpool2d(Var<T>);                                              \
  template Var<T> matmul(Var<T>, Var<T>, bool);                                   \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                  \
  template Var<T> softmax(Var<T>, int);                                           \
  template Var<T> cross_entropy_loss(Var<T>, std::span<const int>);               \
  template std::vector<T> softmax_values(std::span<const T>);

CMOS_INSTANTIATE_OPS(float)
CMOS_INSTANTIATE_OPS(double)

}  // namespace cmos
