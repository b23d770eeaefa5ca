#include <gtest/gtest.h>

#include <cmath>

#include "kqg/nn/gradcheck.hpp"
#include "kqg/nn/layers.hpp"
#include "kqg/nn/optim.hpp"

using namespace kqg;
using namespace kqg::nn;
using Mat = Eigen::MatrixXd;
using T = Tape<double>;
using V = Var<double>;

namespace {

struct Fixture {
  ParameterSet<double> params;
  Parameter<double>* a;
  Parameter<double>* b;
  Parameter<double>* v;
  Parameter<double>* w;

  Fixture() {
    a = &params.add("a", Group::QgCore, 3, 4);
    b = &params.add("b", Group::QgCore, 4, 2);
    v = &params.add("v", Group::QgCore, 5, 1);
    w = &params.add("w", Group::Knowledge, 3, 4);
    params.initialize(11, 1.0);
  }

  double check(const std::function<V(T&)>& loss) {
    GradCheckOptions opts;
    opts.eps = 1e-6;
    opts.coords_per_param = 6;
    return grad_check<double>(params, loss, opts).max_rel_error;
  }
};

// Weighted sum so every output element gets a distinct upstream gradient.
V reduce(T& tape, const V& x) {
  Mat weights(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = 0.3 + 0.17 * double(i);
  return sum(mul(x, tape.constant(weights)));
}

}  // namespace

TEST(Autodiff, ElementwiseAndMatmulGradients) {
  Fixture f;
  EXPECT_LT(f.check([&](T& t) { return reduce(t, matmul(t.param(*f.a), t.param(*f.b))); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, mul(t.param(*f.a), t.param(*f.w))); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, sub(tanh(t.param(*f.a)), sigmoid(t.param(*f.w)))); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, affine(t.param(*f.a), -2.0, 0.5)); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) {
              return reduce(t, scale_by(slice_rows(t.param(*f.v), 2, 1), t.param(*f.a)));
            }),
            1e-6);
}

TEST(Autodiff, StructuralOpGradients) {
  Fixture f;
  EXPECT_LT(f.check([&](T& t) { return reduce(t, concat_rows<double>({t.param(*f.a), t.param(*f.w)})); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, concat_cols<double>({t.param(*f.a), t.param(*f.w)})); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, transpose(t.param(*f.b))); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, mean_rows(t.param(*f.a))); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) {
              const auto a = t.param(*f.a);
              return reduce(t, stack_rows<double>({row_vector(a, 2), row_vector(a, 0)}));
            }),
            1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, pad_rows(t.param(*f.v), 8)); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) {
              const std::vector<std::uint8_t> mask{1, 0, 1};
              return reduce(t, mask_rows(t.param(*f.a), mask));
            }),
            1e-6);
}

TEST(Autodiff, SoftmaxEmbeddingScatterNllGradients) {
  Fixture f;
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0};
  EXPECT_LT(f.check([&](T& t) { return reduce(t, softmax(t.param(*f.v), mask)); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return reduce(t, softmax_rows(t.param(*f.a))); }), 1e-6);
  const std::vector<int> ids{2, 0, 2};
  EXPECT_LT(f.check([&](T& t) { return reduce(t, embedding(t.param(*f.a), ids)); }), 1e-6);
  const std::vector<int> targets{1, 3, 1, 0, 6};
  EXPECT_LT(f.check([&](T& t) { return reduce(t, scatter_sum(t.param(*f.v), targets, 7)); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) { return nll(softmax(t.param(*f.v)), 3); }), 1e-6);
  EXPECT_LT(f.check([&](T& t) {
              const auto v = t.param(*f.v);
              return reduce(t, maxout(concat_rows<double>({v, affine(v, -0.7, 0.1)})));
            }),
            1e-6);
}

TEST(Autodiff, LstmAndAttentionGradients) {
  ParameterSet<double> params;
  const auto layer = make_lstm_layer(params, "cell", Group::QgCore, 3, 4);
  auto& x = params.add("x", Group::QgCore, 3, 1);
  auto& keys = params.add("keys", Group::QgCore, 5, 4);
  auto& W = params.add("W", Group::QgCore, 4, 4);
  params.initialize(5, 0.5);
  GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.coords_per_param = 8;
  const auto res = grad_check<double>(params, [&](T& t) {
    auto state = zero_state(t, 4);
    state = lstm_cell(layer, t.param(x), state);
    state = lstm_cell(layer, t.param(x), state);
    const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1};
    const auto att = bilinear_attention(t.param(keys), t.param(W), state.h, mask);
    return reduce(t, concat_rows<double>({att.context, state.c}));
  }, opts);
  EXPECT_LT(res.max_rel_error, 1e-5) << res.worst_param;
}

TEST(Autodiff, MaskedSoftmaxGivesExactZeros) {
  T tape;
  const auto v = tape.constant((Mat(4, 1) << 3.0, 100.0, -2.0, 0.5).finished());
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  const auto p = softmax(v, mask);
  EXPECT_EQ(p.value()(1, 0), 0.0);
  EXPECT_NEAR(p.value().sum(), 1.0, 1e-12);
}

TEST(Autodiff, SoftmaxIsStableForLargeLogits) {
  T tape;
  const auto p = softmax(tape.constant((Mat(3, 1) << 1000.0, 999.0, -1000.0).finished()));
  EXPECT_TRUE(p.value().allFinite());
  EXPECT_NEAR(p.value()(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Autodiff, MaxoutTiesGoToFirst) {
  T tape;
  Parameter<double> p{"p", Group::QgCore, (Mat(4, 1) << 2.0, 2.0, 1.0, 3.0).finished(), {}};
  const auto out = maxout(tape.param(p));
  EXPECT_EQ(out.value()(0, 0), 2.0);
  EXPECT_EQ(out.value()(1, 0), 3.0);
  tape.backward(sum(out));
  EXPECT_EQ(p.grad(0, 0), 1.0);
  EXPECT_EQ(p.grad(1, 0), 0.0);
  EXPECT_EQ(p.grad(3, 0), 1.0);
}

TEST(Autodiff, NllClampCountsAndStaysFinite) {
  T tape;
  const auto p = tape.constant((Mat(3, 1) << 0.0, 0.5, 0.5).finished());
  int clamped = 0;
  const auto loss = nll(p, 0, 1e-12, &clamped);
  EXPECT_EQ(clamped, 1);
  EXPECT_NEAR(loss.scalar(), -std::log(1e-12), 1e-9);
}

TEST(Autodiff, NonFiniteValuesRaise) {
  T tape;
  Mat bad(1, 1);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(tape.constant(bad), NumericalError);
  const auto big = tape.constant(Mat::Constant(1, 1, 1e308));
  EXPECT_THROW(affine(big, 10.0), NumericalError);
}

TEST(Autodiff, ShapeMismatchRaises) {
  T tape;
  const auto a = tape.constant(Mat::Ones(2, 3));
  const auto b = tape.constant(Mat::Ones(2, 3));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(tape.backward(a), ShapeError);
  EXPECT_THROW(softmax(a), ShapeError);
}

TEST(Autodiff, DropoutOnlyWhileTraining) {
  Parameter<double> p{"p", Group::QgCore, Mat::Ones(200, 1), {}};
  T eval;
  EXPECT_EQ(dropout(eval.param(p), 0.5).value(), p.value);
  T train(true, 3);
  const auto out = dropout(train.param(p), 0.5);
  const auto zeros = (out.value().array() == 0.0).count();
  EXPECT_GT(zeros, 50);
  EXPECT_LT(zeros, 150);
  EXPECT_TRUE(((out.value().array() == 0.0) || (out.value().array() == 2.0)).all());
  EXPECT_THROW(dropout(eval.param(p), 1.0), ValidationError);
}

TEST(Autodiff, NoGradTapeSkipsParameters) {
  Parameter<double> p{"p", Group::QgCore, Mat::Ones(2, 2), {}};
  T tape;
  tape.set_grad_enabled(false);
  const auto y = sum(tanh(tape.param(p)));
  EXPECT_FALSE(tape.requires_grad(y.id()));
}

TEST(Optimizer, FrozenParametersKeepValuesAndMoments) {
  ParameterSet<double> params;
  auto& a = params.add("a", Group::QgCore, 2, 2);
  auto& k = params.add("k", Group::Knowledge, 2, 2);
  params.initialize(1);
  auto state = make_adam_state(params);
  for (auto& p : params) p.grad = Mat::Ones(p.value.rows(), p.value.cols());
  const Mat k_before = k.value, a_before = a.value;
  adam_step<double>(params, state, {}, [](const Parameter<double>& p) { return p.group == Group::QgCore; });
  EXPECT_EQ(k.value, k_before);
  EXPECT_EQ(state.m[1], Mat::Zero(2, 2));
  EXPECT_EQ(state.steps[1], 0);
  EXPECT_NE(a.value, a_before);
  // First Adam step moves each coordinate by lr against the gradient sign.
  EXPECT_NEAR((a_before - a.value)(0, 0), 1e-3, 1e-9);
}

TEST(Optimizer, ClipGradNorm) {
  ParameterSet<double> params;
  auto& a = params.add("a", Group::QgCore, 1, 2);
  a.grad = (Mat(1, 2) << 3.0, 4.0).finished();
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad.norm(), 1.0, 1e-12);
  EXPECT_NEAR(a.grad(0, 1), 0.8, 1e-12);
}
