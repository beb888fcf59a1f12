#include <gtest/gtest.h>

#include <functional>

#include <cmath>

#include "pddpm/error.hpp"
#include "pddpm/nn/ops.hpp"
#include "test_util.hpp"

using namespace pddpm;
using namespace pddpm::nn;
using pddpm::testing::check_gradients;
using pddpm::testing::random_tensor;

namespace {

// Direct nested-loop convolution, the reference for the GEMM path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor y({n, cout, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < cout; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = yy * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(x.at(s, c, iy, ix)) *
                       w[((static_cast<std::size_t>(o) * cin + c) * k + ky) * k + kx];
              }
          y.at(s, o, yy, xx) = static_cast<float>(acc);
        }
  return y;
}

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b, Conv2dAttrs attrs) {
  Tape tape;
  auto out = conv2d(tape, tape.input(x), tape.input(w), tape.input(b), attrs);
  return tape.value(out);
}

}  // namespace

TEST(Conv2d, IdentityKernelLeavesImageUnchanged) {
  const Tensor x = random_tensor({1, 1, 7, 5}, 1);
  const Tensor y = run_conv(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f), {});
  EXPECT_EQ(y, x);
}

TEST(Conv2d, ConstantImageWithOnesKernel) {
  const Tensor y = run_conv(Tensor({1, 1, 4, 4}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}, 0.0f), {1, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 1), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 2, 2), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 3, 3), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 1), 6.0f);
}

TEST(Conv2d, MatchesNestedLoopReference) {
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{1, 0, 1}, std::tuple{2, 0, 3}}) {
    const Tensor x = random_tensor({2, 3, 9, 8}, 2);
    const Tensor w = random_tensor({4, 3, k, k}, 3);
    const Tensor b = random_tensor({4}, 4);
    const Tensor got = run_conv(x, w, b, {stride, pad});
    const Tensor want = naive_conv(x, w, b, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-4) << "stride " << stride;
  }
}

TEST(Conv2d, ShapeErrorNamesOpAndDims) {
  Tape tape;
  auto x = tape.input(Tensor({1, 3, 8, 8}));
  auto w = tape.input(Tensor({4, 2, 3, 3}));
  auto b = tape.input(Tensor({4}));
  try {
    conv2d(tape, x, w, b, {1, 1});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("conv2d"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3"), std::string::npos) << msg;
  }
  EXPECT_THROW(conv2d(tape, x, tape.input(Tensor({4, 3, 3, 3})), b, {0, 1}), Error);
}

TEST(Silu, AnalyticProperties) {
  Tape tape;
  auto y = silu(tape, tape.input(Tensor({4}, std::vector<float>{0.0f, 20.0f, 40.0f, -40.0f})));
  const Tensor& v = tape.value(y);
  EXPECT_EQ(v[0], 0.0f);
  EXPECT_NEAR(v[1], 20.0f, 1e-6);
  EXPECT_FLOAT_EQ(v[2], 40.0f);
  EXPECT_NEAR(v[3], 0.0f, 1e-12);
}

TEST(GroupNorm, NormalizesEachGroup) {
  const Tensor x = random_tensor({2, 4, 3, 3}, 5, 3.0f);
  Tape tape;
  auto y = group_norm(tape, tape.input(x), tape.input(Tensor({4}, 1.0f)), tape.input(Tensor({4}, 0.0f)), 2);
  const Tensor& v = tape.value(y);
  for (int n = 0; n < 2; ++n)
    for (int g = 0; g < 2; ++g) {
      double s = 0, s2 = 0;
      for (int c = 2 * g; c < 2 * g + 2; ++c)
        for (int i = 0; i < 9; ++i) {
          const double e = v.at(n, c, i / 3, i % 3);
          s += e;
          s2 += e * e;
        }
      EXPECT_NEAR(s / 18, 0.0, 1e-5);
      EXPECT_NEAR(s2 / 18, 1.0, 1e-3);
    }
}

TEST(Upsample, NearestNeighbour) {
  Tape tape;
  auto y = upsample_nearest2x(tape, tape.input(Tensor({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4})));
  const Tensor& v = tape.value(y);
  ASSERT_EQ(v.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(v.at(0, 0, 0, 1), 1.0f);
  EXPECT_EQ(v.at(0, 0, 1, 3), 2.0f);
  EXPECT_EQ(v.at(0, 0, 3, 0), 3.0f);
  EXPECT_EQ(v.at(0, 0, 2, 2), 4.0f);
}

TEST(Shapes, NoSilentBroadcast) {
  Tape tape;
  auto a = tape.input(Tensor({1, 2, 4, 4}));
  EXPECT_THROW(add(tape, a, tape.input(Tensor({1, 2, 4, 5}))), ShapeError);
  EXPECT_THROW(concat_channels(tape, a, tape.input(Tensor({2, 2, 4, 4}))), ShapeError);
  EXPECT_THROW(mse(tape, a, tape.input(Tensor({1, 2, 4, 3}))), ShapeError);
  EXPECT_THROW(add_channel_bias(tape, a, tape.input(Tensor({1, 3}))), ShapeError);
  EXPECT_THROW(upsample_nearest2x(tape, tape.input(Tensor({2, 4}))), ShapeError);
}

TEST(OpForward, DispatchMatchesTypedOpsAndChecksArity) {
  Tape tape;
  const Tensor xv = random_tensor({1, 2, 4, 4}, 8);
  auto x = tape.input(xv);
  const Var one[] = {x};
  const Var d1 = op_forward(tape, OpKind::kSilu, one), t1 = silu(tape, x);
  EXPECT_EQ(tape.value(d1), tape.value(t1));
  OpAttrs attrs;
  attrs.factor = 2.5f;
  const Var d2 = op_forward(tape, OpKind::kScale, one, attrs), t2 = scale(tape, x, 2.5f);
  EXPECT_EQ(tape.value(d2), tape.value(t2));
  EXPECT_THROW(op_forward(tape, OpKind::kAdd, one), ShapeError);
  EXPECT_EQ(op_name(OpKind::kConv2d), "conv2d");
}

// ---- gradients against central finite differences

namespace {

using OutputFn = std::function<Var(Tape&, const ParamStore&)>;

// Loss n * mean((out - r)^2) against a fixed random target r. The numeric side
// reduces in double and uses a wide step; the loss is at most quadratic in
// most entries, so truncation error stays far below the tolerance.
void expect_grads_ok(ParamStore& params, const OutputFn& out_fn, std::uint64_t seed) {
  Tensor target;
  {
    Tape probe;
    probe.set_grad_enabled(false);
    target = random_tensor(probe.value(out_fn(probe, params)).shape(), seed);
  }
  const auto n = static_cast<float>(target.size());
  auto loss = [&](Tape& t, const ParamStore& ps) { return scale(t, mse(t, out_fn(t, ps), t.input(target)), n); };
  auto numeric = [&](const ParamStore& ps) {
    Tape t;
    t.set_grad_enabled(false);
    return n * pddpm::testing::mse_double(t.value(out_fn(t, ps)), target);
  };
  const auto r = check_gradients(params, loss, 0, 2e-2f, 99, numeric);
  EXPECT_LT(r.max_rel_error, 1e-2) << r.worst;
  EXPECT_GT(r.checked, 0);
}

}  // namespace

TEST(Gradients, LinearSumIsOuterProduct) {
  ParamStore p;
  p.add("w", random_tensor({3, 4}, 1));
  p.add("b", random_tensor({3}, 2));
  const Tensor x = random_tensor({2, 4}, 3);
  auto fn = [&](Tape& t, const ParamStore& ps) {
    return sum(t, linear(t, t.input(x), t.parameter(ps, "w"), t.parameter(ps, "b")));
  };
  Tape tape;
  const auto g = tape.backward(fn(tape, p), p);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(g.at("w")[o * 4 + i], x[i] + x[4 + i], 1e-5);
  for (int o = 0; o < 3; ++o) EXPECT_FLOAT_EQ(g.at("b")[o], 2.0f);
  const auto r = check_gradients(p, fn, 0, 2e-2f);
  EXPECT_LT(r.max_rel_error, 1e-2) << r.worst;
}

TEST(Gradients, Conv2dAllInputs) {
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{1, 0, 1}}) {
    ParamStore p;
    p.add("x", random_tensor({2, 2, 6, 6}, 10));
    p.add("w", random_tensor({3, 2, k, k}, 11, 0.5f));
    p.add("b", random_tensor({3}, 12));
    expect_grads_ok(p, [&, stride = stride, pad = pad](Tape& t, const ParamStore& ps) {
      auto y = conv2d(t, t.parameter(ps, "x"), t.parameter(ps, "w"), t.parameter(ps, "b"), {stride, pad});
      return y;
    }, 13);
  }
}

TEST(Gradients, GroupNorm) {
  ParamStore p;
  p.add("x", random_tensor({2, 4, 3, 3}, 20));
  p.add("g", random_tensor({4}, 21));
  p.add("b", random_tensor({4}, 22));
  expect_grads_ok(p, [](Tape& t, const ParamStore& ps) {
    return group_norm(t, t.parameter(ps, "x"), t.parameter(ps, "g"), t.parameter(ps, "b"), 2);
  }, 23);
}

TEST(Gradients, ElementwiseAndResampling) {
  ParamStore p;
  p.add("a", random_tensor({1, 2, 3, 3}, 30));
  p.add("c", random_tensor({1, 3, 3, 3}, 31));
  p.add("v", random_tensor({1, 5}, 32));
  expect_grads_ok(p, [](Tape& t, const ParamStore& ps) {
    auto a = t.parameter(ps, "a");
    auto c = t.parameter(ps, "c");
    auto cat = concat_channels(t, silu(t, a), sigmoid(t, c));
    auto biased = add_channel_bias(t, cat, t.parameter(ps, "v"));
    auto up = upsample_nearest2x(t, scale(t, biased, 0.7f));
    return add(t, up, up);
  }, 33);
}

TEST(Gradients, DiceBceLoss) {
  ParamStore p;
  p.add("logits", random_tensor({2, 1, 4, 4}, 40));
  Tensor target({2, 1, 4, 4});
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 7 % 3 == 0) ? 1.0f : 0.0f;
  const auto r = check_gradients(p, [&](Tape& t, const ParamStore& ps) {
    return dice_bce_loss(t, t.parameter(ps, "logits"), t.input(target), 1.0f);
  }, 0, 1e-2f);
  EXPECT_LT(r.max_rel_error, 1e-2) << r.worst;
}

TEST(Backward, UntouchedParameterGetsExactZero) {
  ParamStore p;
  p.add("used", random_tensor({3}, 1));
  p.add("unused", random_tensor({3}, 2));
  Tape tape;
  const auto g = tape.backward(sum(tape, tape.parameter(p, "used")), p);
  EXPECT_EQ(g.at("unused"), Tensor({3}, 0.0f));
  EXPECT_EQ(g.at("used"), Tensor({3}, 1.0f));
}

TEST(Backward, EmptyTapeThrows) {
  Tape tape;
  ParamStore p;
  EXPECT_THROW(tape.backward(Var{0}, p), Error);
}

TEST(Backward, DeterministicBits) {
  ParamStore p;
  p.add("w", random_tensor({4, 2, 3, 3}, 50));
  p.add("b", random_tensor({4}, 51));
  const Tensor x = random_tensor({2, 2, 8, 8}, 52);
  auto run = [&] {
    Tape t;
    auto y = conv2d(t, t.input(x), t.parameter(p, "w"), t.parameter(p, "b"), {1, 1});
    return t.backward(mse(t, y, t.input(Tensor(t.value(y).shape(), 0.5f))), p);
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, ActivationCountExcludesParameters) {
  ParamStore p;
  p.add("w", Tensor({100}, 1.0f));
  Tape tape;
  auto x = tape.input(Tensor({10}, 1.0f));
  tape.parameter(p, "w");
  silu(tape, x);
  EXPECT_EQ(tape.activation_elements(), 20u);
}
