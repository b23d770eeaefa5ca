#pragma once

#include <string>
#include <vector>

#include "kqg/nn/ops.hpp"
#include "kqg/nn/parameters.hpp"

namespace kqg::nn {

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& weight, const Var<Scalar>& x, const Var<Scalar>& bias) {
  return add(matmul(weight, x), bias);
}

/// One LSTM layer: W is [4n x (in + n)] over [x; h], gate order i, f, g, o.
template <typename Scalar>
struct LstmLayer {
  Parameter<Scalar>* weight = nullptr;
  Parameter<Scalar>* bias = nullptr;
  Eigen::Index input = 0;
  Eigen::Index hidden = 0;
};

template <typename Scalar>
LstmLayer<Scalar> make_lstm_layer(ParameterSet<Scalar>& params, const std::string& prefix, Group group,
                                  Eigen::Index input, Eigen::Index hidden) {
  LstmLayer<Scalar> layer;
  layer.weight = &params.add(prefix + ".W", group, 4 * hidden, input + hidden);
  layer.bias = &params.add(prefix + ".b", group, 4 * hidden, 1, Init::Zero);
  layer.bias->value.middleRows(hidden, hidden).setConstant(Scalar(1));
  layer.input = input;
  layer.hidden = hidden;
  return layer;
}

template <typename Scalar>
struct LstmState {
  Var<Scalar> h;
  Var<Scalar> c;
};

template <typename Scalar>
LstmState<Scalar> zero_state(Tape<Scalar>& tape, Eigen::Index hidden) {
  return {tape.constant(Matrix<Scalar>::Zero(hidden, 1)), tape.constant(Matrix<Scalar>::Zero(hidden, 1))};
}

/// Fused LSTM step. The node's value is [h'; c'] which is then sliced.
template <typename Scalar>
LstmState<Scalar> lstm_cell(const LstmLayer<Scalar>& layer, const Var<Scalar>& x, const LstmState<Scalar>& prev) {
  const auto n = layer.hidden;
  if (x.cols() != 1 || x.rows() != layer.input)
    throw ShapeError("lstm_cell: input " + shape_str(x) + " vs layer input " + std::to_string(layer.input));
  if (prev.h.rows() != n || prev.c.rows() != n)
    throw ShapeError("lstm_cell: state " + shape_str(prev.h) + " vs hidden " + std::to_string(n));
  auto& tape = x.tape();
  const Var<Scalar> W = tape.param(*layer.weight);
  const Var<Scalar> b = tape.param(*layer.bias);

  Vector<Scalar> xh(layer.input + n);
  xh << x.value(), prev.h.value();
  const Vector<Scalar> z = W.value() * xh + b.value();
  Matrix<Scalar> gates(4 * n, 1);
  for (Eigen::Index k = 0; k < 4 * n; ++k) {
    const bool cell_input = k >= 2 * n && k < 3 * n;
    gates(k, 0) = cell_input ? std::tanh(z(k)) : detail::stable_sigmoid(z(k));
  }
  const auto i = gates.middleRows(0, n).array();
  const auto f = gates.middleRows(n, n).array();
  const auto g = gates.middleRows(2 * n, n).array();
  const auto o = gates.middleRows(3 * n, n).array();
  const Vector<Scalar> c = (f * prev.c.value().array() + i * g).matrix();
  const Vector<Scalar> tc = c.array().tanh().matrix();
  Matrix<Scalar> out(2 * n, 1);
  out << (o * tc.array()).matrix(), c;

  const auto ix = x.id(), ih = prev.h.id(), ic = prev.c.id(), iw = W.id(), ib = b.id();
  const auto in = layer.input;
  auto joint = tape.record(
      "lstm_cell", std::move(out), {x, prev.h, prev.c, W, b},
      [=, gates = std::move(gates), xh = std::move(xh)](Tape<Scalar>& t, const Matrix<Scalar>& grad) {
        const auto gi = gates.middleRows(0, n).array();
        const auto gf = gates.middleRows(n, n).array();
        const auto gg = gates.middleRows(2 * n, n).array();
        const auto go = gates.middleRows(3 * n, n).array();
        const auto dh = grad.topRows(n).array();
        const Vector<Scalar> c_prev = t.value(ic);
        const Vector<Scalar> cval = (gf * c_prev.array() + gi * gg).matrix();
        const auto tcv = cval.array().tanh();
        const Vector<Scalar> dc = (grad.bottomRows(n).array() + dh * go * (Scalar(1) - tcv.square())).matrix();
        Vector<Scalar> dz(4 * n);
        dz.segment(0, n) = (dc.array() * gg * gi * (Scalar(1) - gi)).matrix();
        dz.segment(n, n) = (dc.array() * c_prev.array() * gf * (Scalar(1) - gf)).matrix();
        dz.segment(2 * n, n) = (dc.array() * gi * (Scalar(1) - gg.square())).matrix();
        dz.segment(3 * n, n) = (dh * tcv * go * (Scalar(1) - go)).matrix();
        if (t.requires_grad(iw)) t.accumulate(iw, dz * xh.transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, dz);
        if (t.requires_grad(ic)) t.accumulate(ic, (dc.array() * gf).matrix());
        if (t.requires_grad(ix) || t.requires_grad(ih)) {
          const Vector<Scalar> dxh = t.value(iw).transpose() * dz;
          t.accumulate(ix, dxh.head(in));
          t.accumulate(ih, dxh.tail(n));
        }
      });
  return {slice_rows(joint, 0, n), slice_rows(joint, n, n)};
}

/// Stacked bidirectional LSTM. Output rows are [forward; backward] per position.
template <typename Scalar>
struct BiLstm {
  std::vector<LstmLayer<Scalar>> forward;
  std::vector<LstmLayer<Scalar>> backward;
  Eigen::Index hidden = 0;  // per direction
};

template <typename Scalar>
BiLstm<Scalar> make_bilstm(ParameterSet<Scalar>& params, const std::string& prefix, Group group, Eigen::Index input,
                           Eigen::Index hidden, int layers) {
  BiLstm<Scalar> net;
  net.hidden = hidden;
  for (int l = 0; l < layers; ++l) {
    const auto in = l == 0 ? input : 2 * hidden;
    const auto tag = prefix + ".l" + std::to_string(l);
    net.forward.push_back(make_lstm_layer(params, tag + ".fw", group, in, hidden));
    net.backward.push_back(make_lstm_layer(params, tag + ".bw", group, in, hidden));
  }
  return net;
}

/// Runs the stack over the rows of `inputs` ([L x in]) and returns [L x 2n].
/// Dropout is applied to every layer's output.
template <typename Scalar>
Var<Scalar> run_bilstm(const BiLstm<Scalar>& net, const Var<Scalar>& inputs, double dropout_rate) {
  const auto len = inputs.rows();
  if (len == 0) throw ValidationError("bilstm: empty sequence");
  auto& tape = inputs.tape();
  Var<Scalar> layer_in = inputs;
  for (std::size_t l = 0; l < net.forward.size(); ++l) {
    std::vector<Var<Scalar>> fw(static_cast<std::size_t>(len)), bw(static_cast<std::size_t>(len));
    auto state = zero_state(tape, net.hidden);
    for (Eigen::Index i = 0; i < len; ++i) {
      state = lstm_cell(net.forward[l], row_vector(layer_in, i), state);
      fw[static_cast<std::size_t>(i)] = state.h;
    }
    state = zero_state(tape, net.hidden);
    for (Eigen::Index i = len; i-- > 0;) {
      state = lstm_cell(net.backward[l], row_vector(layer_in, i), state);
      bw[static_cast<std::size_t>(i)] = state.h;
    }
    layer_in = dropout(concat_cols<Scalar>({stack_rows(fw), stack_rows(bw)}), dropout_rate);
  }
  return layer_in;
}

/// Unidirectional stacked LSTM used by the decoders.
template <typename Scalar>
struct StackedLstm {
  std::vector<LstmLayer<Scalar>> layers;
};

template <typename Scalar>
StackedLstm<Scalar> make_stacked_lstm(ParameterSet<Scalar>& params, const std::string& prefix, Group group,
                                      Eigen::Index input, Eigen::Index hidden, int layers) {
  StackedLstm<Scalar> net;
  for (int l = 0; l < layers; ++l)
    net.layers.push_back(make_lstm_layer(params, prefix + ".l" + std::to_string(l), group, l == 0 ? input : hidden, hidden));
  return net;
}

/// Advances every layer by one step and returns the top layer's output.
template <typename Scalar>
Var<Scalar> step_stacked(const StackedLstm<Scalar>& net, const Var<Scalar>& x, std::vector<LstmState<Scalar>>& states,
                         double dropout_rate) {
  Var<Scalar> in = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    states[l] = lstm_cell(net.layers[l], in, states[l]);
    in = l + 1 < net.layers.size() ? dropout(states[l].h, dropout_rate) : states[l].h;
  }
  return in;
}

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> weights;  // [L x 1]
  Var<Scalar> context;  // [d x 1]
};

/// weights = softmax(keys * W * query) over unmasked rows; context = keys^T weights.
template <typename Scalar>
AttentionResult<Scalar> bilinear_attention(const Var<Scalar>& keys, const Var<Scalar>& weight, const Var<Scalar>& query,
                                           std::span<const std::uint8_t> mask = {}) {
  const auto scores = matmul(keys, matmul(weight, query));
  const auto weights = softmax(scores, mask);
  return {weights, matmul(transpose(keys), weights)};
}

}  // namespace kqg::nn
