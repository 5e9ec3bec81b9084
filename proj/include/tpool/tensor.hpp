// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tpool/error.hpp"

namespace tpool {

/// Dense row-major tensor of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
      : shape(std::move(dims)), values(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  [[nodiscard]] std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered, uniquely named tensor collection. Order is insertion order and
/// is what checkpoints serialize.
class TensorMap {
 public:
  Tensor& add(std::string name, Tensor t) {
    if (find(name)) throw ConfigError("duplicate tensor name '" + name + "'");
    entries_.push_back({std::move(name), std::move(t)});
    return entries_.back().tensor;
  }

  [[nodiscard]] const Tensor* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e.tensor;
    }
    return nullptr;
  }

  Tensor* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return &e.tensor;
    }
    return nullptr;
  }

  [[nodiscard]] const Tensor& at(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw ConfigError("no tensor named '" + name + "'");
  }

  Tensor& at(const std::string& name) {
    if (Tensor* t = find(name)) return *t;
    throw ConfigError("no tensor named '" + name + "'");
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  [[nodiscard]] auto begin() { return entries_.begin(); }
  [[nodiscard]] auto end() { return entries_.end(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }

  bool operator==(const TensorMap& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name || !(entries_[i].tensor == other.entries_[i].tensor)) return false;
    }
    return true;
  }

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace tpool
