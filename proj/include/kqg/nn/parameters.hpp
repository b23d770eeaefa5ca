#pragma once

#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <random>
#include <string>

#include "kqg/nn/tensor.hpp"

namespace kqg::nn {

enum class Init { Uniform, Zero };

/// Named trainable tensors, each in exactly one Group. Insertion order is
/// preserved and used for checkpoints, hashing and optimizer state.
template <typename Scalar>
class ParameterSet {
 public:
  using Param = Parameter<Scalar>;

  Param& add(const std::string& name, Group group, Eigen::Index rows, Eigen::Index cols, Init init = Init::Uniform) {
    if (index_.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
    Param& p = params_.emplace_back();
    p.name = name;
    p.group = group;
    p.value.setZero(rows, cols);
    p.grad.setZero(rows, cols);
    if (init == Init::Uniform) uniform_.push_back(params_.size() - 1);
    index_.emplace(name, params_.size() - 1);
    return p;
  }

  /// Draws every Init::Uniform parameter from U(-range, range) in insertion order.
  void initialize(std::uint64_t seed, Scalar range = Scalar(0.1)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-double(range), double(range));
    for (auto i : uniform_)
      for (Eigen::Index k = 0; k < params_[i].value.size(); ++k) params_[i].value.data()[k] = Scalar(dist(rng));
  }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Param& at(const std::string& name) const { return const_cast<ParameterSet*>(this)->at(name); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Copies values from a set with identical names and shapes.
  void assign_values(const ParameterSet& other) {
    if (other.size() != size()) throw ShapeError("assign_values: parameter count differs");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.params_[i];
      auto& dst = params_[i];
      if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols())
        throw ShapeError("assign_values: mismatch at '" + dst.name + "'");
      dst.value = src.value;
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  /// FNV-1a over the raw bytes of every value in `group`.
  std::uint64_t group_hash(Group group) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_) {
      if (p.group != group) continue;
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(p.value.size()); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::deque<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> uniform_;
};

}  // namespace kqg::nn
