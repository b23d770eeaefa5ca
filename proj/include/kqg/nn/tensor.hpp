#pragma once

// Reverse-mode autodiff over dense Eigen matrices.
//
// A Tape records every value produced during a forward pass together with a
// closure that propagates the output gradient back to its inputs. Vars are
// cheap handles (tape pointer + node index). Parameters live outside the tape
// and receive their gradient when Tape::backward finishes.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kqg/errors.hpp"

namespace kqg::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Parameter groups used for freezing.
enum class Group { QgCore, Knowledge };

inline const char* group_name(Group g) { return g == Group::QgCore ? "qg_core" : "knowledge"; }

template <typename Scalar>
struct Parameter {
  std::string name;
  Group group = Group::QgCore;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << '[' << m.rows() << " x " << m.cols() << ']';
  return os.str();
}

template <typename Scalar>
std::string shape_str(const Var<Scalar>& v) {
  return shape_str(v.value());
}

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  explicit Tape(bool training = false, std::uint64_t seed = 0) : training_(training), rng_(seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool training() const { return training_; }

  /// When disabled, parameter leaves created afterwards do not require
  /// gradients and no backward closures are kept (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Mat value) {
    if (!value.allFinite()) throw NumericalError("constant: non-finite value");
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a parameter. Repeated calls return the same node.
  Var<Scalar> param(Parameter<Scalar>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
    nodes_.push_back(Node{{}, {}, {}, &p, grad_enabled_});
    param_ids_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var<Scalar> record(const char* op, Mat value, std::initializer_list<Var<Scalar>> inputs,
                     Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    return record_impl(op, std::move(value), needs, std::move(backward));
  }

  Var<Scalar> record(const char* op, Mat value, const std::vector<Var<Scalar>>& inputs,
                     Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    return record_impl(op, std::move(value), needs, std::move(backward));
  }

  const Mat& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Parameter
  /// gradients are added to Parameter::grad.
  void backward(const Var<Scalar>& root) {
    if (root.rows() != 1 || root.cols() != 1)
      throw ShapeError("backward: root must be [1 x 1], got " + shape_str(root));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) {
        // The closure may accumulate into earlier nodes only, so the
        // reference to this node's gradient stays valid.
        n.backward(*this, n.grad);
      } else if (n.param) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };

  Var<Scalar> record_impl(const char* op, Mat value, bool needs, Backward backward) {
    if (!value.allFinite()) throw NumericalError(std::string(op) + ": non-finite output");
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> param_ids_;
  bool training_;
  bool grad_enabled_ = true;
  std::mt19937_64 rng_;
};

}  // namespace kqg::nn
