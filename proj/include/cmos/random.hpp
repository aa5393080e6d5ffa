#pragma once

#include <cstdint>
#include <random>

#include "cmos/tensor.hpp"

namespace cmos {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a tag (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

template <Real T>
Tensor<T> uniform_tensor(Shape shape, double low, double high, Rng& rng) {
  std::uniform_real_distribution<double> dist(low, high);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <Real T>
Tensor<T> normal_tensor(Shape shape, double mean, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(mean, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace cmos
