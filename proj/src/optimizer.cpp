#include "cmos/optimizer.hpp"

#include <cmath>

namespace cmos {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

template <Real T>
void optimizer_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads,
                    OptimizerState<T>& state, const OptimizerConfig& config) {
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (grads.size() != params.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw ShapeError("optimizer_step: gradient shape " + shape_string(grads[i].shape()) +
                       " for parameter '" + params[i].name + "' of shape " +
                       shape_string(params[i].value.shape()));
    }
    if (config.checked && !grads[i].all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  if (state.first_moment.size() != params.size()) {
    state.step = 0;
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.push_back(Tensor<T>::zeros(p.value.shape()));
      state.second_moment.push_back(Tensor<T>::zeros(p.value.shape()));
    }
  }
  ++state.step;

  const T lr = static_cast<T>(config.learning_rate);
  if (config.kind == OptimizerKind::sgd) {
    const T mu = static_cast<T>(config.momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].value;
      auto& vel = state.first_moment[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        vel[j] = mu * vel[j] + g[j];
        w[j] -= lr * vel[j];
      }
    }
    return;
  }

  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T eps = static_cast<T>(config.epsilon);
  const auto t = static_cast<double>(state.step);
  const T c1 = static_cast<T>(1.0 - std::pow(config.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(config.beta2, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] / c1;
      const T v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template void optimizer_step(ParamStore<float>&, const std::vector<Tensor<float>>&,
                             OptimizerState<float>&, const OptimizerConfig&);
template void optimizer_step(ParamStore<double>&, const std::vector<Tensor<double>>&,
                             OptimizerState<double>&, const OptimizerConfig&);

}  // namespace cmos
