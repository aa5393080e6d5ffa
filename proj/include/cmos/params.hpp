#pragma once

#include <string>
#include <vector>

#include "cmos/tensor.hpp"

namespace cmos {

template <Real T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// Ordered, name-addressable collection of learnable tensors.
template <Real T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> value) {
    if (contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(value)});
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  Tensor<T>& get(const std::string& name) {
    auto* e = find(name);
    if (!e) throw InvalidArgument("missing parameter '" + name + "'");
    return e->value;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }
  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }

 private:
  NamedTensor<T>* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
  const NamedTensor<T>* find(const std::string& name) const {
    return const_cast<ParamStore*>(this)->find(name);
  }

  std::vector<NamedTensor<T>> entries_;
};

}  // namespace cmos
