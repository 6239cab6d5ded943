#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "octaquant/eval.hpp"
#include "octaquant/raster.hpp"
#include "octaquant/segment.hpp"
#include "octaquant/unet.hpp"

namespace octaquant::training {

enum class SourceTag { manual, averaged_auto, pseudo_label };
std::string to_string(SourceTag t);
SourceTag parse_source_tag(const std::string& text);

struct LabeledItem {
  GrayImage image;
  BinaryMask mask;
  SourceTag tag = SourceTag::manual;
  friend bool operator==(const LabeledItem&, const LabeledItem&) = default;
};
using LabeledSet = std::vector<LabeledItem>;

struct TrainConfig {
  int epochs = 120;
  double learning_rate = 1e-4;
  double adam_epsilon = 1e-5;
  int batch_size = 4;
  std::uint64_t seed = 0;
  /// Each item is cut into tile_rows x tile_cols tiles before training.
  int tile_rows = 2;
  int tile_cols = 2;

  /// 120 epochs, lr 1e-4, epsilon 1e-5.
  static TrainConfig initial();
  /// 60 epochs, lr 1e-2, epsilon 1e-2.
  static TrainConfig fine_tune();
  void validate() const;
};

/// Non-overlapping 2x2 tiling in row-major order (top-left, top-right,
/// bottom-left, bottom-right). Extents must be even.
std::array<LabeledItem, 4> split_quadrants(const LabeledItem& item);
LabeledItem reassemble_quadrants(const std::array<LabeledItem, 4>& tiles);

/// General grid tiling; extents must be divisible by the grid.
LabeledSet tile_item(const LabeledItem& item, int grid_rows, int grid_cols);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  /// Dice of the train-mode predictions accumulated over the epoch.
  double dice = 0.0;
};

struct TrainResult {
  unet::ModelWeights weights;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Adam on per-pixel softmax cross-entropy with a fresh optimizer state.
/// Deterministic under config.seed. A non-finite loss raises ComputeError
/// naming the epoch and batch.
TrainResult train(const unet::ModelWeights& initial, const LabeledSet& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Infer-mode segmentation of every item, pooled confusion counts. With
/// `post` the maps go through binarize and small-cluster removal, else
/// only binarize at 0.5.
eval::EvalCounts evaluate(const unet::ModelWeights& weights, const LabeledSet& data,
                          const segment::PostProcessConfig* post = nullptr);

struct HyperParams {
  double learning_rate = 1e-4;
  double epsilon = 1e-5;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// fold_of[i] is the validation fold of item i: a seeded permutation dealt
/// round-robin, so fold sizes differ by at most one.
struct FoldPlan {
  int folds = 3;
  std::vector<int> fold_of;
};
FoldPlan make_fold_plan(std::size_t items, int folds, std::uint64_t seed);

struct CvResult {
  HyperParams best;
  FoldPlan plan;
  /// dice[candidate][fold]; 0 for a candidate whose training diverged.
  std::vector<std::vector<double>> dice;
  std::vector<double> mean_dice;
};

/// k-fold selection of (lr, epsilon) by mean validation Dice. Every fold
/// starts from `initial`. Ties go to the smaller lr, then smaller epsilon.
CvResult cross_validate(const unet::ModelWeights& initial, const LabeledSet& data,
                        std::span<const HyperParams> grid, const TrainConfig& base, int folds = 3);

/// Stage 1: continue training the initial network on the paired set.
TrainResult fine_tune_stage1(const unet::ModelWeights& initial, const LabeledSet& paired, const TrainConfig& config);

struct FramePair {
  GrayImage single;
  GrayImage averaged;
};

struct PseudoLabelResult {
  LabeledSet accepted;
  /// Dice between the segmentations of averaged and single frame, per pool item.
  std::vector<double> agreement;
  std::vector<bool> accepted_flags;
  std::vector<std::string> warnings;
};

/// Segments every averaged image and its single frame with the intermediate
/// network; a pair whose agreement Dice reaches `gate` contributes
/// (single frame, averaged-image segmentation) tagged pseudo_label.
PseudoLabelResult pseudo_label_expand(const unet::ModelWeights& intermediate, std::span<const FramePair> pool,
                                      double gate = 0.7, const segment::PostProcessConfig& post = {});

/// Stage 2: restart from the initial network on the expanded set.
TrainResult fine_tune_stage2(const unet::ModelWeights& initial, const LabeledSet& expanded,
                             const TrainConfig& config);

}  // namespace octaquant::training
