#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "octaquant/nn/layers.hpp"
#include "octaquant/random.hpp"

namespace octaquant::nn {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Direct cross-correlation with explicit loops over every index.
Tensor64 naive_conv(const Tensor64& x, const Tensor64& w, const Tensor64& b, int pad) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), k = w.dim(2);
  const int oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
  Tensor64 out({co, oh, ow});
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y + ky - pad, ix = xx + kx - pad;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              acc += w[((o * ci + c) * k + ky) * k + kx] * x[(c * h + iy) * wd + ix];
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

TEST(Conv2d, OneByOneIdentityKernel) {
  const Tensor x = random_tensor({1, 3, 3}, 1);
  const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f), 0);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, BoxSumWithPadding) {
  const Tensor y = conv2d(Tensor({1, 3, 3}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor{}, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
  EXPECT_FLOAT_EQ(y[4], 9.0f);
  EXPECT_FLOAT_EQ(y[0], 4.0f);
  EXPECT_FLOAT_EQ(y[2], 4.0f);
  EXPECT_FLOAT_EQ(y[6], 4.0f);
  EXPECT_FLOAT_EQ(y[8], 4.0f);
  EXPECT_FLOAT_EQ(y[1], 6.0f);
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  for (int pad : {0, 1}) {
    const Tensor x = random_tensor({2, 5, 5}, 11);
    const Tensor w = random_tensor({3, 2, 3, 3}, 12);
    const Tensor b = random_tensor({3}, 13);
    const Tensor y = conv2d(x, w, b, pad);
    const Tensor64 ref = naive_conv(x.cast<double>(), w.cast<double>(), b.cast<double>(), pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5) << "pad " << pad << " index " << i;
  }
}

TEST(Conv2d, OutputExtentFormula) {
  const Tensor y = conv2d(Tensor({2, 3, 7, 9}, 0.5f), Tensor({4, 3, 5, 5}, 0.1f), Tensor{}, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 7 + 2 - 5 + 1, 9 + 2 - 5 + 1}));
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  try {
    conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor{}, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,4,4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,3,3,3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, LinearityWithoutBias) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 3, 6, 6}, 100 + trial);
    const Tensor y = random_tensor({2, 3, 6, 6}, 200 + trial);
    const Tensor w = random_tensor({4, 3, 3, 3}, 300 + trial);
    const float a = static_cast<float>(rng.uniform(-2, 2));
    const float b = static_cast<float>(rng.uniform(-2, 2));
    Tensor mix = x;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = conv2d(mix, w, Tensor{}, 1);
    const Tensor cx = conv2d(x, w, Tensor{}, 1);
    const Tensor cy = conv2d(y, w, Tensor{}, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i) ASSERT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-4);
  }
}

TEST(Relu6, ClampsBothEnds) {
  const Tensor y = relu6(Tensor({3}, std::vector<float>{-2.0f, 3.5f, 7.0f}));
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 3.5f);
  EXPECT_EQ(y[2], 6.0f);
}

TEST(Relu6, Idempotent) {
  const Tensor x = random_tensor({1000}, 3, -10, 10);
  EXPECT_EQ(relu6(relu6(x)), relu6(x));
}

TEST(Relu6, GradientOnlyInsideOpenInterval) {
  Tape<float> tape;
  const Var x = tape.variable(Tensor({5}, std::vector<float>{-1.0f, 0.0f, 3.0f, 6.0f, 8.0f}));
  tape.backward(sum(tape, relu6(tape, x)));
  const Tensor& g = tape.grad(x);
  EXPECT_EQ(g.values()[0], 0.0f);
  EXPECT_EQ(g.values()[1], 0.0f);
  EXPECT_EQ(g.values()[2], 1.0f);
  EXPECT_EQ(g.values()[3], 0.0f);
  EXPECT_EQ(g.values()[4], 0.0f);
}

TEST(MaxPool2, SingleWindow) {
  const auto r = maxpool2(Tensor({1, 2, 2}, std::vector<float>{1, 2, 3, 4}));
  ASSERT_EQ(r.output.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(r.output[0], 4.0f);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool2, ConstantTensorHalves) {
  const auto r = maxpool2(Tensor({2, 3, 6, 4}, 2.5f));
  EXPECT_EQ(r.output, Tensor({2, 3, 3, 2}, 2.5f));
}

TEST(MaxPool2, MatchesWindowScan) {
  const Tensor x = random_tensor({1, 8, 8}, 21);
  const auto r = maxpool2(x);
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c) {
      float best = -1e30f;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) best = std::max(best, x[(2 * y + dy) * 8 + 2 * c + dx]);
      EXPECT_EQ(r.output[y * 4 + c], best);
    }
}

TEST(MaxPool2, OddExtentRejected) { EXPECT_THROW(maxpool2(Tensor({1, 5, 4})), ShapeError); }

TEST(Upsample, SinglePixel) {
  EXPECT_EQ(upsample_nearest2(Tensor({1, 1, 1}, 7.0f)), Tensor({1, 2, 2}, 7.0f));
}

TEST(Upsample, BlockCheckerboard) {
  const Tensor y = upsample_nearest2(Tensor({1, 2, 2}, std::vector<float>{1, 0, 0, 1}));
  const std::vector<float> expected{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1};
  EXPECT_EQ(y, Tensor({1, 4, 4}, expected));
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  Tape<float> tape;
  Tensor x = random_tensor({4, 3, 5, 5}, 31, -3, 5);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += static_cast<float>((i / 25) % 3) * 10.0f;
  const Var xv = tape.constant(x);
  const Var g = tape.constant(Tensor({3}, 1.0f));
  const Var b = tape.constant(Tensor({3}, 0.0f));
  Tensor rm({3}, 0.0f), rv({3}, 1.0f);
  const Tensor& y = tape.value(batchnorm(tape, xv, g, b, rm, rv, Mode::train));
  for (int c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    for (int n = 0; n < 4; ++n)
      for (int j = 0; j < 25; ++j) s += y[(n * 3 + c) * 25 + j];
    const double mean = s / 100;
    for (int n = 0; n < 4; ++n)
      for (int j = 0; j < 25; ++j) ss += std::pow(y[(n * 3 + c) * 25 + j] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-4);
    EXPECT_NEAR(ss / 100, 1.0, 1e-4);
  }
}

TEST(BatchNorm, InferWithUnitStatsIsIdentity) {
  Tape<float> tape;
  const Tensor x = random_tensor({2, 2, 3, 3}, 41);
  Tensor rm({2}, 0.0f), rv({2}, 1.0f);
  const Var y = batchnorm(tape, tape.constant(x), tape.constant(Tensor({2}, 1.0f)), tape.constant(Tensor({2}, 0.0f)),
                          rm, rv, Mode::infer, BatchNormOptions{0.9, 0.0});
  EXPECT_EQ(tape.value(y), x);
  EXPECT_EQ(rm, Tensor({2}, 0.0f));
}

TEST(BatchNorm, MatchesDirectStatisticsAndRunningUpdate) {
  Tape<double> tape;
  Tensor64 x = random_tensor({3, 2, 4, 4}, 51, -2, 3).cast<double>();
  const Tensor64 gamma({2}, std::vector<double>{1.5, -0.5});
  const Tensor64 beta({2}, std::vector<double>{0.25, 2.0});
  Tensor64 rm({2}, std::vector<double>{0.1, -0.2});
  Tensor64 rv({2}, std::vector<double>{1.0, 2.0});
  const Tensor64 rm0 = rm, rv0 = rv;
  const Var y = batchnorm(tape, tape.constant(x), tape.constant(gamma), tape.constant(beta), rm, rv, Mode::train);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> vals;
    for (int n = 0; n < 3; ++n)
      for (int j = 0; j < 16; ++j) vals.push_back(x[(n * 2 + c) * 16 + j]);
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    double ss = 0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double var = ss / vals.size();
    for (int n = 0; n < 3; ++n)
      for (int j = 0; j < 16; ++j) {
        const std::size_t i = (n * 2 + c) * 16 + j;
        EXPECT_NEAR(tape.value(y)[i], gamma[c] * (x[i] - mean) / std::sqrt(var + 1e-5) + beta[c], 1e-12);
      }
    EXPECT_NEAR(rm[c], 0.9 * rm0[c] + 0.1 * mean, 1e-12);
    EXPECT_NEAR(rv[c], 0.9 * rv0[c] + 0.1 * ss / (vals.size() - 1), 1e-12);
  }
}

TEST(BatchNorm, ZeroVarianceChannelStaysFinite) {
  Tape<float> tape;
  Tensor rm({1}, 0.0f), rv({1}, 1.0f);
  const Var y = batchnorm(tape, tape.constant(Tensor({2, 1, 2, 2}, 3.0f)), tape.constant(Tensor({1}, 1.0f)),
                          tape.constant(Tensor({1}, 0.0f)), rm, rv, Mode::train);
  EXPECT_TRUE(tape.value(y).all_finite());
  EXPECT_EQ(tape.value(y), Tensor({2, 1, 2, 2}, 0.0f));
}

TEST(BatchNorm, TrainModeNeedsTwoValuesPerChannel) {
  Tape<float> tape;
  Tensor rm({1}, 0.0f), rv({1}, 1.0f);
  EXPECT_THROW(batchnorm(tape, tape.constant(Tensor({1, 1, 1, 1}, 3.0f)), tape.constant(Tensor({1}, 1.0f)),
                         tape.constant(Tensor({1}, 0.0f)), rm, rv, Mode::train),
               ShapeError);
}

TEST(Dropout, ZeroProbabilityAndInferAreIdentity) {
  Tape<float> tape;
  const Tensor x = random_tensor({100}, 61);
  const Var v = tape.constant(x);
  EXPECT_EQ(tape.value(dropout(tape, v, 0.0, 1, Mode::train)), x);
  EXPECT_EQ(tape.value(dropout(tape, v, 0.9, 1, Mode::infer)), x);
}

TEST(Dropout, DropFractionNearHalf) {
  const Tensor mask = dropout_mask<float>({1000000}, 0.5, 77);
  const auto dropped = std::count(mask.values().begin(), mask.values().end(), 0.0f);
  // Binomial(1e6, 0.5) has sd 500; 0.01 is 20 sd.
  EXPECT_NEAR(static_cast<double>(dropped) / 1e6, 0.5, 0.01);
  for (float v : mask.values()) ASSERT_TRUE(v == 0.0f || v == 2.0f);
}

TEST(Dropout, SameSeedSameMask) {
  EXPECT_EQ(dropout_mask<float>({4096}, 0.3, 9), dropout_mask<float>({4096}, 0.3, 9));
  EXPECT_NE(dropout_mask<float>({4096}, 0.3, 9), dropout_mask<float>({4096}, 0.3, 10));
}

TEST(Dropout, RejectsInvalidProbability) {
  EXPECT_THROW(dropout_mask<float>({4}, 1.0, 1), ConfigError);
  EXPECT_THROW(dropout_mask<float>({4}, -0.1, 1), ConfigError);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectLogitsGiveTinyLoss) {
  Tape<float> tape;
  Tensor logits({1, 2, 2, 2});
  const std::vector<std::uint8_t> target{1, 0, 0, 1};
  for (int j = 0; j < 4; ++j) {
    logits[j] = target[j] ? -10.0f : 10.0f;
    logits[4 + j] = target[j] ? 10.0f : -10.0f;
  }
  const Var loss = softmax_cross_entropy(tape, tape.constant(logits), target);
  EXPECT_LT(tape.value(loss)[0], 1e-3f);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLn2) {
  Tape<double> tape;
  const std::vector<std::uint8_t> target{1, 0, 1, 1, 0, 0};
  const Var loss = softmax_cross_entropy(tape, tape.constant(Tensor64({1, 2, 2, 3}, 0.3)), target);
  EXPECT_NEAR(tape.value(loss)[0], std::log(2.0), 1e-6);
}

TEST(SoftmaxCrossEntropy, MatchesDirectFormula) {
  Tape<double> tape;
  const Tensor64 logits = random_tensor({2, 2, 3, 3}, 71, -4, 4).cast<double>();
  std::vector<std::uint8_t> target(18);
  Rng rng(72);
  for (auto& t : target) t = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  const Var loss = softmax_cross_entropy(tape, tape.constant(logits), target);
  double expected = 0;
  for (int n = 0; n < 2; ++n)
    for (int j = 0; j < 9; ++j) {
      const double a = logits[n * 18 + j], b = logits[n * 18 + 9 + j];
      const double p = target[n * 9 + j] ? std::exp(b) / (std::exp(a) + std::exp(b))
                                         : std::exp(a) / (std::exp(a) + std::exp(b));
      expected -= std::log(p);
    }
  EXPECT_NEAR(tape.value(loss)[0], expected / 18, 1e-12);
}

TEST(VesselProbability, StableForLargeLogits) {
  const Tensor p = vessel_probability(Tensor({1, 2, 1, 2}, std::vector<float>{1000, -1000, -1000, 1000}));
  EXPECT_EQ(p[0], 0.0f);
  EXPECT_EQ(p[1], 1.0f);
}

TEST(Backward, SumGivesOnes) {
  Tape<float> tape;
  const Var x = tape.variable(random_tensor({2, 3}, 81));
  tape.backward(sum(tape, x));
  EXPECT_EQ(tape.grad(x), Tensor({2, 3}, 1.0f));
}

TEST(Backward, SumOfSquares) {
  Tape<double> tape;
  const Var x = tape.variable(Tensor64({3}, std::vector<double>{1, 2, 3}));
  tape.backward(sum(tape, mul(tape, x, x)));
  EXPECT_EQ(tape.grad(x), Tensor64({3}, std::vector<double>{2, 4, 6}));
}

TEST(Backward, SecondCallWithoutForwardFails) {
  Tape<float> tape;
  const Var x = tape.variable(Tensor({2}, 1.0f));
  const Var loss = sum(tape, x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), Error);
  tape.clear();
  const Var y = tape.variable(Tensor({2}, 1.0f));
  EXPECT_NO_THROW(tape.backward(sum(tape, y)));
}

TEST(Backward, NonScalarLossRejected) {
  Tape<float> tape;
  const Var x = tape.variable(Tensor({2}, 1.0f));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Forward, ConvIsDeterministic) {
  const Tensor x = random_tensor({2, 3, 16, 16}, 91);
  const Tensor w = random_tensor({8, 3, 3, 3}, 92);
  EXPECT_EQ(conv2d(x, w, Tensor{}, 1), conv2d(x, w, Tensor{}, 1));
}

}  // namespace
}  // namespace octaquant::nn
