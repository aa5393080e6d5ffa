#pragma once

#include <string>

#include "cmos/ops.hpp"
#include "cmos/random.hpp"

namespace cmos {

// ---------------------------------------------------------------------------
// Kernel-interpolation temporal convolution (conv-KI)
//
// A single learnable temporal kernel k0 of native length N0 is resampled to the
// frame count N of each input sequence and applied as a 1x1 convolution that
// consumes the whole temporal axis:
//
//   out[i, j, c] = sum_t X[i, j, t] * f(k0)[t, c]
//
// f is endpoint-aligned linear interpolation: output tap j reads source position
// j * (N0 - 1) / (N - 1). No rescaling is applied after interpolation.
// ---------------------------------------------------------------------------

/// Resamples k0 [1,1,N0,n_o] to [1,1,N,n_o]. Returns k0 unchanged when N == N0.
template <Real T>
Tensor<T> interpolate_kernel(const Tensor<T>& k0, std::size_t frames);

/// Recorded version; the backward pass scatters with the same interpolation weights.
template <Real T>
Var<T> interpolate_kernel(Var<T> k0, std::size_t frames);

/// X [r,a,N] or [B,r,a,N] with kernel k0 [1,1,N0,n_o] -> [r,a,n_o] or [B,r,a,n_o].
template <Real T>
Var<T> conv_ki_forward(Var<T> x, Var<T> k0);

// ---------------------------------------------------------------------------
// Non-local block with embedded-Gaussian affinity
//
//   w_ij = softmax_j( phi(x_i)^T psi(x_j) )
//   y_i  = sum_j w_ij g(x_j)
//   z_i  = theta(y_i) + x_i
//
// phi, psi, g map C -> C_e and theta maps C_e -> C, all as 1x1 projections.
// Segment scope attends within each batch element; subject scope attends over the
// positions of every element in the batch jointly.
// ---------------------------------------------------------------------------

enum class NLScope { segment, subject };

std::string to_string(NLScope scope);

/// Embedding width C_e = max(1, C / 2).
std::size_t embedding_width(std::size_t channels);

template <Real T>
struct NLBlockParams {
  Tensor<T> phi_w;    // [C, C_e]
  Tensor<T> psi_w;    // [C, C_e]
  Tensor<T> g_w;      // [C, C_e]
  Tensor<T> theta_w;  // [C_e, C]
  NLScope scope = NLScope::segment;
};

/// The same parameters bound to graph leaves.
template <Real T>
struct NLBlockVars {
  Var<T> phi_w, psi_w, g_w, theta_w;
  NLScope scope = NLScope::segment;
};

/// Random phi/psi/g (uniform, variance 1/C) and all-zero theta.
template <Real T>
NLBlockParams<T> init_nl_block(std::size_t channels, NLScope scope, Rng& rng);

template <Real T>
NLBlockVars<T> bind(Graph<T>& g, const NLBlockParams<T>& params, bool requires_grad);

/// Attention weights for positions x [P,C] (or independent groups [G,P,C]) -> [P,P] / [G,P,P].
template <Real T>
Var<T> nl_attention(Var<T> x, Var<T> phi_w, Var<T> psi_w);

/// Full residual block on feature maps x [B,H,W,C].
template <Real T>
Var<T> nl_block_forward(Var<T> x, const NLBlockVars<T>& params);

}  // namespace cmos
