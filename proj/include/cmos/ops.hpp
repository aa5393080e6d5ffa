#pragma once

#include <span>

#include "cmos/graph.hpp"

namespace cmos {

enum class Padding { same, valid };

// Elementwise and structural ops.
template <Real T> Var<T> add(Var<T> a, Var<T> b);
template <Real T> Var<T> mul(Var<T> a, Var<T> b);
template <Real T> Var<T> scale(Var<T> a, T factor);
template <Real T> Var<T> sum(Var<T> a);
template <Real T> Var<T> reshape(Var<T> a, Shape shape);
template <Real T> Var<T> relu(Var<T> a);

/// Adds bias[C] to every position of x[..., C].
template <Real T> Var<T> add_bias(Var<T> x, Var<T> bias);

/// Stride-1 cross-correlation. input [H,W,Cin] or [B,H,W,Cin], kernel [kh,kw,Cin,Cout].
/// `same` pads with zeros, (k-1)/2 before and the remainder after.
template <Real T> Var<T> conv2d(Var<T> input, Var<T> kernel, Padding padding);

/// 2x2 max pooling, stride 2, ceil mode. input [H,W,C] or [B,H,W,C].
/// Backward routes to the first (row-major) maximum of each window.
template <Real T> Var<T> maxpool2d(Var<T> input);

/// Matrix product over the last two axes. a is [m,k] or [G,m,k]; b is [k,n] or [G,k,n]
/// ([n,k] / [G,n,k] with transpose_b). A rank-2 b is shared across all G groups.
template <Real T> Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false);

/// Affine map: input [n] or [B,n], weights [n,m], bias [m].
template <Real T> Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias);

/// Numerically stable softmax along `axis` (negative counts from the end).
template <Real T> Var<T> softmax(Var<T> input, int axis = -1);

/// Mean over the batch of -log softmax(logits)[label]. logits [B,K] or [K].
template <Real T> Var<T> cross_entropy_loss(Var<T> logits, std::span<const int> labels);

/// Plain (non-recorded) softmax of one vector, used by prediction code.
template <Real T> std::vector<T> softmax_values(std::span<const T> logits);

}  // namespace cmos
