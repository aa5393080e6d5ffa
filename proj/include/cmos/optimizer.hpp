#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmos/params.hpp"

namespace cmos {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool checked = true;  // reject non-finite gradients
};

/// Per-parameter moments, aligned with the ParamStore order. Empty until the first step.
template <Real T>
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

/// Applies one update. `grads[i]` is the gradient of `params[i]`.
template <Real T>
void optimizer_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads,
                    OptimizerState<T>& state, const OptimizerConfig& config);

}  // namespace cmos
