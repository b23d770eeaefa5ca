#pragma once

// Differentiable free functions over Var. Sequences are stored row-major
// ([positions x features]); single vectors are columns ([n x 1]).

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kqg/nn/tensor.hpp"

namespace kqg::nn {

namespace detail {

template <typename Scalar>
void require(bool ok, const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
void softmax_inplace(Eigen::MatrixBase<Derived>&& v) {
  const auto m = v.maxCoeff();
  v = (v.array() - m).exp().matrix();
  v /= v.sum();
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.rows(), "matmul", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("matmul", a.value() * b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("add", a.value() + b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("mul", a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

/// alpha * a + beta, elementwise.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& a, Scalar alpha, Scalar beta = Scalar(0)) {
  const auto ia = a.id();
  Matrix<Scalar> out = (alpha * a.value().array() + beta).matrix();
  return a.tape().record("affine", std::move(out), {a}, [ia, alpha](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, alpha * g);
  });
}

/// s * a where s is [1 x 1].
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& s, const Var<Scalar>& a) {
  detail::require(s.rows() == 1 && s.cols() == 1, "scale_by", s, a);
  const auto is = s.id(), ia = a.id();
  return a.tape().record("scale_by", s.scalar() * a.value(), {s, a}, [is, ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(is)) t.accumulate(is, Matrix<Scalar>::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
    if (t.requires_grad(ia)) t.accumulate(ia, t.value(is)(0, 0) * g);
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  const auto ia = a.id();
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  auto& tape = a.tape();
  const auto io = tape.size();
  return tape.record("tanh", std::move(out), {a}, [ia, io](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& y = t.value(io);
    t.accumulate(ia, g.cwiseProduct((Scalar(1) - y.array().square()).matrix()));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const auto ia = a.id();
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return detail::stable_sigmoid(x); });
  auto& tape = a.tape();
  const auto io = tape.size();
  return tape.record("sigmoid", std::move(out), {a}, [ia, io](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& y = t.value(io);
    t.accumulate(ia, g.cwiseProduct((y.array() * (Scalar(1) - y.array())).matrix()));
  });
}

/// Vertical concatenation; all parts share the column count.
template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows", parts.front(), p);
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id(), p.rows());
    r += p.rows();
  }
  return parts.front().tape().record("concat_rows", std::move(out), parts,
                                     [spans](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                       Eigen::Index r = 0;
                                       for (const auto& [id, n] : spans) {
                                         if (t.requires_grad(id)) t.accumulate(id, g.middleRows(r, n));
                                         r += n;
                                       }
                                     });
}

/// Horizontal concatenation; all parts share the row count.
template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols", parts.front(), p);
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    spans.emplace_back(p.id(), p.cols());
    c += p.cols();
  }
  return parts.front().tape().record("concat_cols", std::move(out), parts,
                                     [spans](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                       Eigen::Index c = 0;
                                       for (const auto& [id, n] : spans) {
                                         if (t.requires_grad(id)) t.accumulate(id, g.middleCols(c, n));
                                         c += n;
                                       }
                                     });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " + shape_str(a));
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return a.tape().record("slice_rows", a.value().middleRows(start, count), {a},
                         [ia, start, count, rows, cols](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
                           full.middleRows(start, count) = g;
                           t.accumulate(ia, full);
                         });
}

/// Row i of a matrix as a column vector.
template <typename Scalar>
Var<Scalar> row_vector(const Var<Scalar>& a, Eigen::Index i) {
  if (i < 0 || i >= a.rows()) throw ShapeError("row_vector: row " + std::to_string(i) + " out of " + shape_str(a));
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return a.tape().record("row_vector", a.value().row(i).transpose(), {a},
                         [ia, i, rows, cols](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
                           full.row(i) = g.transpose();
                           t.accumulate(ia, full);
                         });
}

/// Stacks column vectors as the rows of a matrix.
template <typename Scalar>
Var<Scalar> stack_rows(const std::vector<Var<Scalar>>& cols_in) {
  if (cols_in.empty()) throw ShapeError("stack_rows: no inputs");
  const auto dim = cols_in.front().rows();
  Matrix<Scalar> out(static_cast<Eigen::Index>(cols_in.size()), dim);
  std::vector<std::size_t> ids;
  for (std::size_t r = 0; r < cols_in.size(); ++r) {
    const auto& v = cols_in[r];
    detail::require(v.cols() == 1 && v.rows() == dim, "stack_rows", cols_in.front(), v);
    out.row(static_cast<Eigen::Index>(r)) = v.value().transpose();
    ids.push_back(v.id());
  }
  return cols_in.front().tape().record("stack_rows", std::move(out), cols_in,
                                       [ids](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                         for (std::size_t r = 0; r < ids.size(); ++r)
                                           if (t.requires_grad(ids[r]))
                                             t.accumulate(ids[r], g.row(static_cast<Eigen::Index>(r)).transpose());
                                       });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  const auto ia = a.id();
  return a.tape().record("transpose", a.value().transpose(), {a}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g.transpose());
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return a.tape().record("sum", Matrix<Scalar>::Constant(1, 1, a.value().sum()), {a},
                         [ia, rows, cols](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           t.accumulate(ia, Matrix<Scalar>::Constant(rows, cols, g(0, 0)));
                         });
}

/// Column-wise mean of the rows: [L x d] -> [d x 1].
template <typename Scalar>
Var<Scalar> mean_rows(const Var<Scalar>& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
  const auto ia = a.id();
  const auto rows = a.rows();
  return a.tape().record("mean_rows", a.value().colwise().mean().transpose(), {a},
                         [ia, rows](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           t.accumulate(ia, (g.transpose() / Scalar(rows)).replicate(rows, 1));
                         });
}

/// Element v(index, 0) as [1 x 1].
template <typename Scalar>
Var<Scalar> pick(const Var<Scalar>& v, Eigen::Index index) {
  if (v.cols() != 1 || index < 0 || index >= v.rows())
    throw ShapeError("pick: index " + std::to_string(index) + " out of " + shape_str(v));
  const auto iv = v.id();
  const auto rows = v.rows();
  return v.tape().record("pick", Matrix<Scalar>::Constant(1, 1, v.value()(index, 0)), {v},
                         [iv, index, rows](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, 1);
                           full(index, 0) = g(0, 0);
                           t.accumulate(iv, full);
                         });
}

/// Softmax over a column vector. Positions with mask 0 get exactly 0 weight.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& v, std::span<const std::uint8_t> mask = {}) {
  if (v.cols() != 1) throw ShapeError("softmax: expected a column vector, got " + shape_str(v));
  if (!v.value().allFinite()) throw NumericalError("softmax: non-finite input");
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != v.rows())
    throw ShapeError("softmax: mask length " + std::to_string(mask.size()) + " vs " + shape_str(v));
  Matrix<Scalar> out = Matrix<Scalar>::Zero(v.rows(), 1);
  if (mask.empty()) {
    out = v.value();
    detail::softmax_inplace(out.col(0));
  } else {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (mask[i]) m = std::max(m, v.value()(i, 0));
    if (!std::isfinite(m)) throw ShapeError("softmax: mask selects no position");
    Scalar z = 0;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (mask[i]) z += (out(i, 0) = std::exp(v.value()(i, 0) - m));
    out /= z;
  }
  const auto iv = v.id();
  auto& tape = v.tape();
  const auto io = tape.size();
  return tape.record("softmax", std::move(out), {v}, [iv, io](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& y = t.value(io);
    const Scalar dot = y.cwiseProduct(g).sum();
    t.accumulate(iv, y.cwiseProduct((g.array() - dot).matrix()));
  });
}

/// Row-wise softmax; columns with mask 0 get exactly 0 weight in every row.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a, std::span<const std::uint8_t> col_mask = {}) {
  if (!a.value().allFinite()) throw NumericalError("softmax_rows: non-finite input");
  if (!col_mask.empty() && static_cast<Eigen::Index>(col_mask.size()) != a.cols())
    throw ShapeError("softmax_rows: mask length " + std::to_string(col_mask.size()) + " vs " + shape_str(a));
  Matrix<Scalar> out = Matrix<Scalar>::Zero(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      if (col_mask.empty() || col_mask[c]) m = std::max(m, a.value()(r, c));
    if (!std::isfinite(m)) throw ShapeError("softmax_rows: mask selects no column");
    Scalar z = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      if (col_mask.empty() || col_mask[c]) z += (out(r, c) = std::exp(a.value()(r, c) - m));
    out.row(r) /= z;
  }
  const auto ia = a.id();
  auto& tape = a.tape();
  const auto io = tape.size();
  return tape.record("softmax_rows", std::move(out), {a}, [ia, io](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& y = t.value(io);
    const Vector<Scalar> dots = y.cwiseProduct(g).rowwise().sum();
    t.accumulate(ia, y.cwiseProduct(g - dots.replicate(1, g.cols())));
  });
}

/// Pairwise max over consecutive entries: [2k x 1] -> [k x 1].
template <typename Scalar>
Var<Scalar> maxout(const Var<Scalar>& v) {
  if (v.cols() != 1 || v.rows() % 2 != 0)
    throw ShapeError("maxout: expected an even-length column vector, got " + shape_str(v));
  const auto k = v.rows() / 2;
  Matrix<Scalar> out(k, 1);
  std::vector<Eigen::Index> winners(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    const Scalar a = v.value()(2 * j, 0), b = v.value()(2 * j + 1, 0);
    winners[static_cast<std::size_t>(j)] = b > a ? 2 * j + 1 : 2 * j;
    out(j, 0) = std::max(a, b);
  }
  const auto iv = v.id();
  const auto rows = v.rows();
  return v.tape().record("maxout", std::move(out), {v}, [iv, rows, winners](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, 1);
    for (std::size_t j = 0; j < winners.size(); ++j) full(winners[j], 0) = g(static_cast<Eigen::Index>(j), 0);
    t.accumulate(iv, full);
  });
}

/// Inverted dropout. Identity when the tape is not training or rate is 0.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& a, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must lie in [0, 1)");
  auto& tape = a.tape();
  if (!tape.training() || rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = Scalar(1) / Scalar(1.0 - rate);
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(tape.rng()) ? scale : Scalar(0);
  const auto ia = a.id();
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  return tape.record("dropout", std::move(out), {a}, [ia, mask = std::move(mask)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

/// Gathers rows of an embedding table: ids -> [n x dim].
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= table.rows())
      throw ShapeError("embedding: id " + std::to_string(ids[r]) + " out of table " + shape_str(table));
    out.row(static_cast<Eigen::Index>(r)) = table.value().row(ids[r]);
  }
  const auto it = table.id();
  const auto rows = table.rows(), cols = table.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().record("embedding", std::move(out), {table},
                             [it, rows, cols, idv = std::move(idv)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                               Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
                               for (std::size_t r = 0; r < idv.size(); ++r)
                                 full.row(idv[r]) += g.row(static_cast<Eigen::Index>(r));
                               t.accumulate(it, full);
                             });
}

/// Zeroes the rows whose mask entry is 0.
template <typename Scalar>
Var<Scalar> mask_rows(const Var<Scalar>& a, std::span<const std::uint8_t> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != a.rows())
    throw ShapeError("mask_rows: mask length " + std::to_string(mask.size()) + " vs " + shape_str(a));
  Matrix<Scalar> keep = Matrix<Scalar>::Zero(a.rows(), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) keep(static_cast<Eigen::Index>(i), 0) = mask[i] ? 1 : 0;
  const auto ia = a.id();
  Matrix<Scalar> out = keep.asDiagonal() * a.value();
  return a.tape().record("mask_rows", std::move(out), {a}, [ia, keep = std::move(keep)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, keep.asDiagonal() * g);
  });
}

/// -log(p[target]) with p clamped below at `floor`. `clamped` (optional)
/// is incremented whenever the clamp is hit.
template <typename Scalar>
Var<Scalar> nll(const Var<Scalar>& p, Eigen::Index target, Scalar floor = Scalar(1e-12), int* clamped = nullptr) {
  if (p.cols() != 1 || target < 0 || target >= p.rows())
    throw ShapeError("nll: target " + std::to_string(target) + " out of " + shape_str(p));
  const Scalar raw = p.value()(target, 0);
  const bool hit = raw < floor;
  if (hit && clamped) ++*clamped;
  const Scalar pt = hit ? floor : raw;
  const auto ip = p.id();
  const auto rows = p.rows();
  return p.tape().record("nll", Matrix<Scalar>::Constant(1, 1, -std::log(pt)), {p},
                         [ip, rows, target, pt, hit](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (hit) return;
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, 1);
                           full(target, 0) = -g(0, 0) / pt;
                           t.accumulate(ip, full);
                         });
}

/// out[ids[i]] += v[i] for a column vector v; out has `size` rows.
template <typename Scalar>
Var<Scalar> scatter_sum(const Var<Scalar>& v, std::span<const int> ids, Eigen::Index size) {
  if (v.cols() != 1 || static_cast<Eigen::Index>(ids.size()) != v.rows())
    throw ShapeError("scatter_sum: " + std::to_string(ids.size()) + " ids for " + shape_str(v));
  Matrix<Scalar> out = Matrix<Scalar>::Zero(size, 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= size) throw ShapeError("scatter_sum: id " + std::to_string(ids[i]) + " out of range");
    out(ids[i], 0) += v.value()(static_cast<Eigen::Index>(i), 0);
  }
  const auto iv = v.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return v.tape().record("scatter_sum", std::move(out), {v}, [iv, idv = std::move(idv)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> d(static_cast<Eigen::Index>(idv.size()), 1);
    for (std::size_t i = 0; i < idv.size(); ++i) d(static_cast<Eigen::Index>(i), 0) = g(idv[i], 0);
    t.accumulate(iv, d);
  });
}

/// Appends zero rows so the result has `rows` rows.
template <typename Scalar>
Var<Scalar> pad_rows(const Var<Scalar>& a, Eigen::Index rows) {
  if (rows < a.rows()) throw ShapeError("pad_rows: cannot shrink " + shape_str(a));
  if (rows == a.rows()) return a;
  return concat_rows<Scalar>({a, a.tape().constant(Matrix<Scalar>::Zero(rows - a.rows(), a.cols()))});
}

}  // namespace kqg::nn
