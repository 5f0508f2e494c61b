#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "xnet/grad_check.hpp"
#include "xnet/grad_suite.hpp"
#include "xnet/heads.hpp"
#include "xnet/kernels.hpp"
#include "xnet/ops.hpp"
#include "xnet/optim.hpp"

using namespace xnet;
using V = Var<double>;

namespace {

Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Direct sliding-window sum, written independently of the library.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, const ConvSpec& s) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0);
  const std::size_t oh = (h + 2 * s.pad_h - s.kernel_h) / s.stride_h + 1;
  const std::size_t ow = (wd + 2 * s.pad_w - s.kernel_w) / s.stride_w + 1;
  Tensor<double> y({n, co, oh, ow});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < s.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                const long iy = static_cast<long>(oy * s.stride_h + ky) - static_cast<long>(s.pad_h);
                const long ix = static_cast<long>(ox * s.stride_w + kx) - static_cast<long>(s.pad_w);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x.at(in, ci, iy, ix) * w.at(o, ci, ky, kx);
              }
          y.at(in, o, oy, ox) = acc;
        }
  return y;
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthAgree) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
}

TEST(Tensor, IndexingIsBoundsChecked) {
  Tensor<double> t({2, 3});
  t.at(1, 2) = 7.0;
  EXPECT_EQ(t[5], 7.0);
  try {
    t.at(2, 0);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.axis(), "axis 0");
  }
  EXPECT_THROW(t.at(0, 0, 0), ShapeError);
}

TEST(Tensor, RequireShapeNamesTheAxis) {
  try {
    require_shape({2, 3, 4}, {2, 5, 4}, "x");
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.axis(), "axis 1");
  }
}

TEST(Autograd, DiamondGraphAccumulatesBothPaths) {
  V x = V::parameter(Tensor<double>({3}, std::vector<double>{1, -2, 3}));
  V y = sum(add(scale(x, 2.0), x));  // d/dx = 3
  y.backward();
  for (double g : x.grad().data()) EXPECT_DOUBLE_EQ(g, 3.0);
}

TEST(Autograd, NonFiniteValuesRaise) {
  V x = V::constant(Tensor<double>({2}, std::vector<double>{1.0, std::numeric_limits<double>::infinity()}));
  EXPECT_THROW(relu(x), NumericError);
  V big = V::constant(Tensor<double>({1}, std::vector<double>{1e308}));
  EXPECT_THROW(scale(big, 10.0), NumericError);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  V x = V::parameter(Tensor<double>({2}, 1.0));
  {
    NoGradGuard guard;
    V y = sum(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(sum(x).requires_grad());
}

TEST(Conv2d, IdentityOneByOne) {
  const ConvSpec spec = ConvSpec::square(1, 1, 1, 1, 1);
  V x = V::constant(Tensor<double>({1, 1, 1, 1}, 3.0));
  V w = V::constant(Tensor<double>({1, 1, 1, 1}, 1.0));
  V b = V::constant(Tensor<double>({1}, 0.0));
  EXPECT_EQ(conv2d(x, w, b, spec).value().item(), 3.0);
}

TEST(Conv2d, StrideOneTwoHalvesWidthOnly) {
  const ConvSpec spec = ConvSpec::square(1, 4, 3, 1, 2);
  V x = V::constant(Tensor<double>({1, 1, 8, 8}, 1.0));
  V w = V::constant(Tensor<double>({4, 1, 3, 3}, 0.1));
  V b = V::constant(Tensor<double>({4}, 0.0));
  EXPECT_EQ(conv2d(x, w, b, spec).shape(), (Shape{1, 4, 8, 4}));
  const ConvSpec tall = ConvSpec::square(1, 4, 3, 2, 1);
  EXPECT_EQ(conv2d(x, w, b, tall).shape(), (Shape{1, 4, 4, 8}));
}

TEST(Conv2d, ExtentFormulaFloorsAndRejectsEmptyOutput) {
  ConvSpec s = ConvSpec::square(1, 1, 3, 2, 2);
  EXPECT_EQ(s.out_height(7), 4u);  // floor((7+2-3)/2)+1
  EXPECT_EQ(s.out_width(1), 1u);
  ConvSpec nopad = s;
  nopad.pad_h = nopad.pad_w = 0;
  try {
    nopad.out_width(2);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.axis(), "width");
  }
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
  std::mt19937_64 rng(1);
  const ConvSpec spec = ConvSpec::square(2, 3, 3, 2, 1);
  const Tensor<double> x = random_tensor({1, 2, 5, 7}, rng);
  const Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> b = random_tensor({3}, rng);
  const Tensor<double> y = conv2d(V::constant(x), V::constant(w), V::constant(b), spec).value();
  const Tensor<double> ref = conv_oracle(x, w, b, spec);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, RejectsChannelMismatch) {
  const ConvSpec spec = ConvSpec::square(3, 1, 3, 1, 1);
  V x = V::constant(Tensor<double>({1, 2, 4, 4}));
  V w = V::constant(Tensor<double>({1, 3, 3, 3}));
  V b = V::constant(Tensor<double>({1}));
  try {
    conv2d(x, w, b, spec);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.axis(), "channels");
  }
}

TEST(Conv2dProperty, ParallelKernelsMatchSerialReference) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> ext(3, 11), ch(1, 5), n(1, 3), k(0, 1), st(1, 2);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t kernel = k(rng) ? 3 : 1;
    const ConvSpec spec = ConvSpec::square(ch(rng), ch(rng), kernel, st(rng), st(rng));
    const ConvGeometry g = ConvGeometry::make(spec, n(rng), ext(rng), ext(rng));
    const Tensor<double> x = random_tensor({g.batch, spec.in_channels, g.in_h, g.in_w}, rng);
    const Tensor<double> w = random_tensor({spec.out_channels, spec.in_channels, kernel, kernel}, rng);
    const Tensor<double> b = random_tensor({spec.out_channels}, rng);
    const Tensor<double> dy = random_tensor({g.batch, spec.out_channels, g.out_h, g.out_w}, rng);
    Tensor<double> y1(dy.shape()), y2(dy.shape());
    kernels::conv2d_forward<double>(g, x.data(), w.data(), b.data(), y1.data());
    reference::conv2d_forward<double>(g, x.data(), w.data(), b.data(), y2.data());
    for (std::size_t i = 0; i < y1.numel(); ++i) ASSERT_NEAR(y1[i], y2[i], 1e-11);

    Tensor<double> dx1(x.shape()), dw1(w.shape()), db1(b.shape()), dx2(x.shape()), dw2(w.shape()), db2(b.shape());
    kernels::conv2d_backward<double>(g, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
    reference::conv2d_backward<double>(g, x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data());
    for (std::size_t i = 0; i < dx1.numel(); ++i) ASSERT_NEAR(dx1[i], dx2[i], 1e-11);
    for (std::size_t i = 0; i < dw1.numel(); ++i) ASSERT_NEAR(dw1[i], dw2[i], 1e-10);
    for (std::size_t i = 0; i < db1.numel(); ++i) ASSERT_NEAR(db1[i], db2[i], 1e-10);
  }
}

TEST(Conv2dProperty, LinearInInputWithZeroBias) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const ConvSpec spec = ConvSpec::square(2, 2, 3, 1 + trial % 2, 1 + (trial / 2) % 2);
    const Tensor<double> x = random_tensor({1, 2, 6, 6}, rng);
    const Tensor<double> w = random_tensor({2, 2, 3, 3}, rng);
    const V b = V::constant(Tensor<double>({2}));
    const double a = 1.7 + trial;
    const Tensor<double> y = conv2d(V::constant(x), V::constant(w), b, spec).value();
    const Tensor<double> ya = conv2d(scale(V::constant(x), a), V::constant(w), b, spec).value();
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(ya[i], a * y[i], 1e-10 * std::max(1.0, std::abs(a * y[i])));
  }
}

TEST(Relu, ClampsNegativesAndZero) {
  V x = V::parameter(Tensor<double>({3}, std::vector<double>{-1, 0, 2}));
  V y = relu(x);
  EXPECT_EQ(y.value().storage(), (std::vector<double>{0, 0, 2}));
  sum(y).backward();
  EXPECT_EQ(x.grad().storage(), (std::vector<double>{0, 0, 1}));  // subgradient 0 at 0
}

TEST(Relu, AllNegativeGivesZeroAndZeroGradient) {
  V x = V::parameter(Tensor<double>({4}, -0.5));
  V y = relu(x);
  sum(y).backward();
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
  for (double g : x.grad().data()) EXPECT_EQ(g, 0.0);
}

TEST(Sigmoid, HalfAtZeroAndStableAtExtremes) {
  EXPECT_EQ(sigmoid(V::constant(Tensor<double>({1}, 0.0))).value().item(), 0.5);
  const double tiny = sigmoid(V::constant(Tensor<double>({1}, -800.0))).value().item();
  EXPECT_GE(tiny, 0.0);
  EXPECT_LT(tiny, 1e-300);
  // the clamped focal loss stays finite on a saturated prediction
  V p = sigmoid(V::constant(Tensor<double>({1, 1, 1, 1}, -800.0)));
  const double loss = focal_loss(p, Tensor<double>({1, 1, 1, 1}, 1.0)).value().item();
  EXPECT_TRUE(std::isfinite(loss));
}

TEST(MaxPool, SinglePixelSpreadsToPlateau) {
  Tensor<double> t({1, 5, 5});
  t.at(0, 2, 2) = 1.0;
  const Tensor<double> y = max_pool_3x3_stride1(V::constant(t)).value();
  for (std::size_t yy = 0; yy < 5; ++yy)
    for (std::size_t xx = 0; xx < 5; ++xx) {
      const bool near = yy >= 1 && yy <= 3 && xx >= 1 && xx <= 3;
      EXPECT_EQ(y.at(0, yy, xx), near ? 1.0 : 0.0);
    }
}

TEST(MaxPool, ConstantMapUnchanged) {
  Tensor<double> t({2, 4, 4}, 0.25);
  EXPECT_EQ(max_pool_3x3_stride1(V::constant(t)).value(), t);
}

TEST(MaxPool, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(4);
  const Tensor<double> t = random_tensor({1, 6, 6}, rng);
  const Tensor<double> y = max_pool_3x3_stride1(V::constant(t)).value();
  for (int yy = 0; yy < 6; ++yy)
    for (int xx = 0; xx < 6; ++xx) {
      double m = -1e300;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int a = yy + dy, b = xx + dx;
          if (a >= 0 && b >= 0 && a < 6 && b < 6) m = std::max(m, t.at(0, a, b));
        }
      EXPECT_EQ(y.at(0, yy, xx), m);
    }
}

TEST(Upsample, RepeatsEachCellTwiceAndSumsGradients) {
  const V x = V::parameter(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  const V y = upsample2x(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(y.value(), Tensor<double>({1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  sum(y).backward();
  for (double g : x.grad().data()) EXPECT_EQ(g, 4.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  V w = V::parameter(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
  Adam<double> opt({{"w", w}}, AdamConfig{0.1});
  w.mutable_grad().fill(0.0);
  opt.step();
  EXPECT_EQ(w.value().storage(), (std::vector<double>{1, 2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  V w = V::parameter(Tensor<double>({1}, 0.0));
  Adam<double> opt({{"w", w}}, AdamConfig{0.1});
  w.mutable_grad()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1: step = lr * 1 / (1 + eps)
  EXPECT_NEAR(w.value()[0], -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, QuadraticBowlConverges) {
  V w = V::parameter(Tensor<double>({1}, 1.0));
  Adam<double> opt({{"w", w}}, AdamConfig{0.05});
  for (int k = 0; k < 200; ++k) {
    opt.zero_grad();
    // f = w^2, gradient set directly
    w.mutable_grad()[0] = 2.0 * w.value()[0];
    opt.step();
  }
  EXPECT_LT(std::abs(w.value()[0]), 1e-2);
  // scripted oracle: same recurrence written out by hand
  double p = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 200; ++t) {
    const double g = 2.0 * p;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    p -= 0.05 / (1 - std::pow(0.9, t)) * m / (std::sqrt(v) / std::sqrt(1 - std::pow(0.999, t)) + 1e-8);
  }
  EXPECT_NEAR(w.value()[0], p, 1e-12);
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
  V w = V::parameter(Tensor<double>({1}, 0.0));
  Adam<double> opt({{"head.conv1.weight", w}}, AdamConfig{0.1});
  w.mutable_grad()[0] = std::nan("");
  try {
    opt.step();
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.conv1.weight"), std::string::npos);
  }
  EXPECT_EQ(w.value()[0], 0.0);
}

TEST(GradCheck, SumHasExactOnesGradient) {
  std::mt19937_64 rng(5);
  V w = V::parameter(random_tensor({4, 3}, rng));
  const GradCheckResult r = grad_check([&] { return sum(w); }, {w});
  EXPECT_LT(r.max_rel_error, 1e-10);
  EXPECT_EQ(r.checked, 12u);
}

TEST(GradCheck, ConvReluSumChain) {
  std::mt19937_64 rng(6);
  const ConvSpec spec = ConvSpec::square(1, 2, 3, 1, 1);
  V x = V::parameter(random_tensor({1, 1, 6, 6}, rng));
  V w = V::parameter(random_tensor({2, 1, 3, 3}, rng));
  V b = V::parameter(random_tensor({2}, rng));
  const GradCheckResult r = grad_check([&] { return sum(relu(conv2d(x, w, b, spec))); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, FocalLossHeadOnTwoLayerToyNet) {
  std::mt19937_64 rng(7);
  const ConvSpec s1 = ConvSpec::square(2, 3, 3, 1, 1);
  const ConvSpec s2 = ConvSpec::square(3, 1, 1, 1, 1);
  V x = V::constant(random_tensor({1, 2, 5, 5}, rng, -1, 1));
  V w1 = V::parameter(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  V b1 = V::parameter(random_tensor({3}, rng, -0.5, 0.5));
  V w2 = V::parameter(random_tensor({1, 3, 1, 1}, rng, -0.5, 0.5));
  V b2 = V::parameter(random_tensor({1}, rng, -0.5, 0.5));
  Tensor<double> target({1, 1, 5, 5});
  target.at(0, 0, 2, 2) = 1.0;
  target.at(0, 0, 2, 3) = 0.6;
  target.at(0, 0, 1, 2) = 0.6;
  const auto f = [&] { return focal_loss(sigmoid(conv2d(relu(conv2d(x, w1, b1, s1)), w2, b2, s2)), target); };
  EXPECT_LT(grad_check(f, {w1, b1, w2, b2}).max_rel_error, 1e-3);
}

TEST(GradCheckProperty, EveryOpPassesOnRandomInstances) {
  for (const OpGradReport& r : run_grad_suite(20, 11)) {
    EXPECT_EQ(r.instances, 20) << r.op;
    EXPECT_LT(r.max_rel_error, 1e-4) << r.op;
  }
}
