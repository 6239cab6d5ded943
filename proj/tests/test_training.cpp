#include <gtest/gtest.h>

#include <random>
#include <set>

#include "octaquant/error.hpp"
#include "octaquant/phantom.hpp"
#include "octaquant/segment.hpp"
#include "octaquant/training.hpp"

using namespace octaquant;
using training::LabeledItem;
using training::LabeledSet;
using training::TrainConfig;

namespace {

unet::UnetConfig small_net(float dropout = 0.5f) {
  unet::UnetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  c.dropout_p = dropout;
  return c;
}

LabeledSet phantom_set(int count, int side, std::uint64_t seed) {
  LabeledSet out;
  for (int i = 0; i < count; ++i) {
    phantom::PhantomSpec s;
    s.rows = s.cols = side;
    s.seed = seed + static_cast<std::uint64_t>(i);
    const auto item = phantom::generate(s);
    out.push_back({item.frames.averaged, item.truth.mask, training::SourceTag::averaged_auto});
  }
  return out;
}

TrainConfig quick(int epochs, double lr = 1e-2) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.adam_epsilon = 1e-8;
  c.batch_size = 4;
  c.seed = 11;
  c.tile_rows = c.tile_cols = 1;
  return c;
}

}  // namespace

TEST(Training, Presets) {
  const TrainConfig a = TrainConfig::initial();
  EXPECT_EQ(a.epochs, 120);
  EXPECT_DOUBLE_EQ(a.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(a.adam_epsilon, 1e-5);
  const TrainConfig b = TrainConfig::fine_tune();
  EXPECT_EQ(b.epochs, 60);
  EXPECT_DOUBLE_EQ(b.learning_rate, 1e-2);
  EXPECT_DOUBLE_EQ(b.adam_epsilon, 1e-2);
}

TEST(Training, ConfigValidation) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.adam_epsilon = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, QuadrantsMatchOffsets) {
  std::mt19937_64 rng(5);
  LabeledItem item{GrayImage(10, 14), BinaryMask(10, 14), training::SourceTag::manual};
  for (auto& v : item.image.pixels()) v = static_cast<std::uint8_t>(rng());
  for (auto& v : item.mask.pixels()) v = rng() & 1;
  const auto q = training::split_quadrants(item);
  for (int k = 0; k < 4; ++k) {
    ASSERT_EQ(q[k].image.rows(), 5);
    ASSERT_EQ(q[k].image.cols(), 7);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 7; ++c) {
        EXPECT_EQ(q[k].image(r, c), item.image(r + 5 * (k / 2), c + 7 * (k % 2)));
        EXPECT_EQ(q[k].mask(r, c), item.mask(r + 5 * (k / 2), c + 7 * (k % 2)));
      }
    }
  }
  EXPECT_EQ(training::reassemble_quadrants(q), item);
}

TEST(Training, OddExtentsRejected) {
  LabeledItem item{GrayImage(9, 8), BinaryMask(9, 8), training::SourceTag::manual};
  EXPECT_THROW(training::split_quadrants(item), ShapeError);
  EXPECT_THROW(training::tile_item(item, 1, 3), ShapeError);
  EXPECT_EQ(training::tile_item(item, 3, 4).size(), 12u);
}

TEST(Training, ZeroLearningRateKeepsParameters) {
  const auto w0 = unet::build(small_net(), 3);
  const auto res = training::train(w0, phantom_set(4, 16, 1), quick(2, 0.0));
  EXPECT_EQ(res.weights.parameters, w0.parameters);
  EXPECT_EQ(res.history.size(), 2u);
}

TEST(Training, ZeroEpochsReturnsInitial) {
  const auto w0 = unet::build(small_net(), 3);
  const auto res = training::train(w0, phantom_set(2, 16, 1), quick(0));
  EXPECT_EQ(res.weights, w0);
  EXPECT_TRUE(res.history.empty());
}

TEST(Training, EmptyAndMismatchedSetsRejected) {
  const auto w0 = unet::build(small_net(), 3);
  EXPECT_THROW(training::train(w0, {}, quick(1)), ConfigError);
  LabeledSet mixed = phantom_set(1, 16, 1);
  mixed.push_back(phantom_set(1, 32, 2).front());
  EXPECT_THROW(training::train(w0, mixed, quick(1)), ShapeError);
  EXPECT_THROW(training::train(w0, phantom_set(1, 17, 1), quick(1)), ShapeError);
}

TEST(Training, Deterministic) {
  const auto w0 = unet::build(small_net(), 3);
  const LabeledSet data = phantom_set(6, 16, 40);
  const auto a = training::train(w0, data, quick(3));
  const auto b = training::train(w0, data, quick(3));
  EXPECT_EQ(a.weights, b.weights);
  TrainConfig other = quick(3);
  other.seed = 12;
  EXPECT_NE(training::train(w0, data, other).weights, a.weights);
}

TEST(Training, OverfitsSmallSet) {
  const auto w0 = unet::build(small_net(0.0f), 9);
  const LabeledSet data = phantom_set(8, 16, 70);
  const auto res = training::train(w0, data, quick(80));
  ASSERT_EQ(res.history.size(), 80u);
  EXPECT_LT(res.history.back().loss, 0.5 * res.history.front().loss);
  EXPECT_GT(eval::dice(training::evaluate(res.weights, data)), 0.8);
}

TEST(Training, DivergenceNamesEpoch) {
  const auto w0 = unet::build(small_net(), 3);
  try {
    training::train(w0, phantom_set(4, 16, 1), quick(5, 1e38));
    FAIL() << "expected divergence";
  } catch (const ComputeError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Training, FoldPlanCoversEveryItemOnce) {
  for (std::size_t n : {3u, 10u, 17u}) {
    const auto plan = training::make_fold_plan(n, 3, 4);
    ASSERT_EQ(plan.fold_of.size(), n);
    std::vector<int> sizes(3, 0);
    for (int f : plan.fold_of) {
      ASSERT_GE(f, 0);
      ASSERT_LT(f, 3);
      ++sizes[static_cast<std::size_t>(f)];
    }
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1);
    EXPECT_EQ(training::make_fold_plan(n, 3, 4).fold_of, plan.fold_of);
  }
  EXPECT_THROW(training::make_fold_plan(2, 3, 0), ConfigError);
  EXPECT_THROW(training::make_fold_plan(5, 1, 0), ConfigError);
}

TEST(Training, CrossValidationTieBreak) {
  const auto w0 = unet::build(small_net(), 3);
  const std::vector<training::HyperParams> grid{{0.0, 1e-2}, {0.0, 1e-5}};
  const auto res = training::cross_validate(w0, phantom_set(6, 16, 1), grid, quick(1), 3);
  EXPECT_DOUBLE_EQ(res.mean_dice[0], res.mean_dice[1]);
  EXPECT_EQ(res.best, grid[1]);
}

TEST(Training, DegenerateLearningRateLoses) {
  const auto w0 = unet::build(small_net(), 3);
  const std::vector<training::HyperParams> grid{{1e3, 1e-8}, {1e-2, 1e-8}};
  const auto res = training::cross_validate(w0, phantom_set(9, 16, 1), grid, quick(15), 3);
  EXPECT_EQ(res.best, grid[1]);
  EXPECT_EQ(res.dice.size(), 2u);
  EXPECT_EQ(res.dice[0].size(), 3u);
}

TEST(Training, PseudoLabelGate) {
  const auto w = unet::build(small_net(), 3);
  std::vector<training::FramePair> pool;
  for (int i = 0; i < 3; ++i) {
    phantom::PhantomSpec s;
    s.rows = s.cols = 16;
    s.seed = 500 + i;
    const auto item = phantom::generate(s);
    pool.push_back({item.frames.single, item.frames.averaged});
  }
  pool.push_back({pool[0].averaged, pool[0].averaged});

  const auto all = training::pseudo_label_expand(w, pool, 0.0);
  EXPECT_EQ(all.accepted.size(), pool.size());
  EXPECT_TRUE(all.warnings.empty());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(all.accepted[i].tag, training::SourceTag::pseudo_label);
    EXPECT_EQ(all.accepted[i].image, pool[i].single);
    EXPECT_EQ(all.accepted[i].mask, segment::postprocess(unet::forward(w, pool[i].averaged), {}));
  }

  // Identical frames agree perfectly, so only they pass a gate of 1.
  const auto strict = training::pseudo_label_expand(w, pool, 1.0);
  EXPECT_TRUE(strict.accepted_flags[3]);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(strict.accepted_flags[i], strict.agreement[i] >= 1.0);
  }

  const auto none = training::pseudo_label_expand(w, pool, 1.5);
  EXPECT_TRUE(none.accepted.empty());
  EXPECT_EQ(none.warnings.size(), 1u);
}

TEST(Training, SourceTagRoundTrip) {
  for (auto t : {training::SourceTag::manual, training::SourceTag::averaged_auto, training::SourceTag::pseudo_label}) {
    EXPECT_EQ(training::parse_source_tag(training::to_string(t)), t);
  }
  EXPECT_THROW(training::parse_source_tag("nope"), FormatError);
}
