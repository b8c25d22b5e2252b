#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dauction/autodiff.hpp"
#include "dauction/errors.hpp"
#include "dauction/rng.hpp"

namespace dauction {

template <typename T>
struct ParamBlock {
  std::string name;
  ad::Matrix<T> value;
};

// Named parameter blocks in a fixed declaration order. The flat view
// concatenates blocks in that order, each block row-major.
template <typename T>
class ParamStore {
 public:
  ad::Matrix<T>& add(const std::string& name, ad::Index rows, ad::Index cols) {
    require(!index_.contains(name), "duplicate parameter block " + name);
    index_.emplace(name, blocks_.size());
    blocks_.push_back({name, ad::Matrix<T>::Zero(rows, cols)});
    return blocks_.back().value;
  }

  const std::vector<ParamBlock<T>>& blocks() const { return blocks_; }
  std::vector<ParamBlock<T>>& blocks() { return blocks_; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter block " + name);
    return it->second;
  }

  const ad::Matrix<T>& at(const std::string& name) const { return blocks_[index_of(name)].value; }
  ad::Matrix<T>& at(const std::string& name) { return blocks_[index_of(name)].value; }

  std::size_t size() const {
    std::size_t total = 0;
    for (const auto& b : blocks_) total += static_cast<std::size_t>(b.value.size());
    return total;
  }

  std::vector<T> flatten() const {
    std::vector<T> flat;
    flat.reserve(size());
    for (const auto& b : blocks_) flat.insert(flat.end(), b.value.data(), b.value.data() + b.value.size());
    return flat;
  }

  void unflatten(std::span<const T> flat) {
    require(flat.size() == size(), "unflatten: length mismatch");
    std::size_t off = 0;
    for (auto& b : blocks_) {
      std::copy_n(flat.data() + off, b.value.size(), b.value.data());
      off += static_cast<std::size_t>(b.value.size());
    }
  }

  // theta <- theta + alpha * delta over the flat view.
  void axpy(double alpha, std::span<const double> delta) {
    require(delta.size() == size(), "axpy: length mismatch");
    std::size_t off = 0;
    for (auto& b : blocks_) {
      T* d = b.value.data();
      for (ad::Index k = 0; k < b.value.size(); ++k) d[k] += static_cast<T>(alpha * delta[off + k]);
      off += static_cast<std::size_t>(b.value.size());
    }
  }

  bool all_finite() const {
    for (const auto& b : blocks_) {
      if (!b.value.allFinite()) return false;
    }
    return true;
  }

  std::vector<ad::Var<T>> bind(bool requires_grad) const {
    std::vector<ad::Var<T>> vars;
    vars.reserve(blocks_.size());
    for (const auto& b : blocks_) {
      vars.push_back(requires_grad ? ad::Var<T>::leaf(b.value) : ad::Var<T>::constant(b.value));
    }
    return vars;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& b : blocks_) {
      out.add(b.name, b.value.rows(), b.value.cols()) = b.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<ParamBlock<T>> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Concatenated gradients of bound parameters, in binding order, as doubles.
template <typename T>
std::vector<double> gather_grad(std::span<const ad::Var<T>> vars) {
  std::vector<double> flat;
  for (const auto& v : vars) {
    const auto g = v.grad();
    for (ad::Index k = 0; k < g.size(); ++k) flat.push_back(static_cast<double>(g.data()[k]));
  }
  return flat;
}

}  // namespace dauction
