#include "octaquant/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "octaquant/error.hpp"
#include "octaquant/nn/adam.hpp"
#include "octaquant/nn/layers.hpp"
#include "octaquant/random.hpp"

namespace octaquant::training {
namespace {

template <typename R>
R crop(const R& src, int r0, int c0, int rows, int cols) {
  R out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out(r, c) = src(r0 + r, c0 + c);
  }
  return out;
}

}  // namespace

std::string to_string(SourceTag t) {
  switch (t) {
    case SourceTag::manual: return "manual";
    case SourceTag::averaged_auto: return "averaged_auto";
    case SourceTag::pseudo_label: return "pseudo_label";
  }
  return "manual";
}

SourceTag parse_source_tag(const std::string& text) {
  if (text == "manual") return SourceTag::manual;
  if (text == "averaged_auto") return SourceTag::averaged_auto;
  if (text == "pseudo_label") return SourceTag::pseudo_label;
  throw FormatError("unknown source tag '" + text + "' (expected manual, averaged_auto or pseudo_label)");
}

TrainConfig TrainConfig::initial() { return TrainConfig{}; }

TrainConfig TrainConfig::fine_tune() {
  TrainConfig c;
  c.epochs = 60;
  c.learning_rate = 1e-2;
  c.adam_epsilon = 1e-2;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (tile_rows < 1 || tile_cols < 1) throw ConfigError("tile grid must be positive");
}

LabeledSet tile_item(const LabeledItem& item, int grid_rows, int grid_cols) {
  require_same_extents(item.image, item.mask, "tile_item");
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("tile grid must be positive");
  const int rows = item.image.rows();
  const int cols = item.image.cols();
  if (rows % grid_rows || cols % grid_cols) {
    throw ShapeError("image " + std::to_string(rows) + "x" + std::to_string(cols) + " does not split into a " +
                     std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " tile grid");
  }
  const int th = rows / grid_rows;
  const int tw = cols / grid_cols;
  LabeledSet out;
  for (int i = 0; i < grid_rows; ++i) {
    for (int j = 0; j < grid_cols; ++j) {
      out.push_back({crop(item.image, i * th, j * tw, th, tw), crop(item.mask, i * th, j * tw, th, tw), item.tag});
    }
  }
  return out;
}

std::array<LabeledItem, 4> split_quadrants(const LabeledItem& item) {
  LabeledSet t = tile_item(item, 2, 2);
  return {std::move(t[0]), std::move(t[1]), std::move(t[2]), std::move(t[3])};
}

LabeledItem reassemble_quadrants(const std::array<LabeledItem, 4>& tiles) {
  const int th = tiles[0].image.rows();
  const int tw = tiles[0].image.cols();
  for (const auto& t : tiles) {
    if (t.image.rows() != th || t.image.cols() != tw || !t.image.same_extents(t.mask)) {
      throw ShapeError("quadrants must share extents");
    }
  }
  LabeledItem out{GrayImage(2 * th, 2 * tw), BinaryMask(2 * th, 2 * tw), tiles[0].tag};
  for (int q = 0; q < 4; ++q) {
    const int r0 = (q / 2) * th;
    const int c0 = (q % 2) * tw;
    for (int r = 0; r < th; ++r) {
      for (int c = 0; c < tw; ++c) {
        out.image(r0 + r, c0 + c) = tiles[static_cast<std::size_t>(q)].image(r, c);
        out.mask(r0 + r, c0 + c) = tiles[static_cast<std::size_t>(q)].mask(r, c);
      }
    }
  }
  return out;
}

TrainResult train(const unet::ModelWeights& initial, const LabeledSet& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result{initial, {}};
  if (config.epochs == 0) return result;
  if (data.empty()) throw ConfigError("training set is empty");

  LabeledSet tiles;
  for (const LabeledItem& item : data) {
    for (auto& t : tile_item(item, config.tile_rows, config.tile_cols)) tiles.push_back(std::move(t));
  }
  const int rows = tiles.front().image.rows();
  const int cols = tiles.front().image.cols();
  for (const LabeledItem& t : tiles) {
    if (t.image.rows() != rows || t.image.cols() != cols) {
      throw ShapeError("all training tiles must share extents; got " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " and " + std::to_string(t.image.rows()) + "x" +
                       std::to_string(t.image.cols()));
    }
  }
  unet::check_extents(initial.config, rows, cols);

  unet::ModelWeights& w = result.weights;
  nn::AdamState adam(nn::AdamConfig{config.learning_rate, config.adam_epsilon});
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), 0);

  nn::Tape<float> tape;
  std::vector<nn::Var> params;
  std::vector<nn::Tensor> buffers;
  std::vector<nn::Tensor> grads(w.parameters.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(mix_seed(config.seed, 2 * static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    eval::EvalCounts counts;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<GrayImage> images;
      std::vector<std::uint8_t> targets;
      targets.reserve((end - start) * plane);
      for (std::size_t k = start; k < end; ++k) {
        const LabeledItem& t = tiles[order[k]];
        images.push_back(t.image);
        for (std::uint8_t m : t.mask.pixels()) targets.push_back(m ? 1 : 0);
      }

      tape.clear();
      params.clear();
      for (const nn::NamedTensor& p : w.parameters) params.push_back(tape.variable(p.value));
      buffers.clear();
      for (const nn::NamedTensor& b : w.buffers) buffers.push_back(b.value);
      const nn::Var input = tape.constant(unet::to_input(images));
      const std::uint64_t dropout_seed = mix_seed(mix_seed(config.seed, 2 * static_cast<std::uint64_t>(epoch) + 1), batch);
      const nn::Var logits = unet::logits<float>(tape, w.config, params, buffers, input, nn::Mode::train, dropout_seed);
      const nn::Var loss = nn::softmax_cross_entropy(tape, logits, targets);
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw ComputeError("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch + 1));
      }
      const nn::Tensor prob = nn::vessel_probability(tape.value(logits));
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const bool p = prob[i] >= 0.5f;
        const bool t = targets[i] != 0;
        counts.tp += p && t;
        counts.fp += p && !t;
        counts.fn += !p && t;
        counts.tn += !p && !t;
      }
      tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] = tape.grad(params[i]);
      nn::adam_step(w.parameters, grads, adam);
      for (std::size_t i = 0; i < buffers.size(); ++i) w.buffers[i].value = std::move(buffers[i]);
      loss_sum += loss_value;
      ++batches;
    }
    EpochStats stats{epoch + 1, loss_sum / static_cast<double>(batches), eval::dice(counts)};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

eval::EvalCounts evaluate(const unet::ModelWeights& weights, const LabeledSet& data,
                          const segment::PostProcessConfig* post) {
  eval::EvalCounts total;
  for (const LabeledItem& item : data) {
    const ProbabilityMap p = unet::forward(weights, item.image);
    const BinaryMask m = post ? segment::postprocess(p, *post) : segment::binarize(p, 0.5f);
    total += eval::confusion(m, item.mask);
  }
  return total;
}

FoldPlan make_fold_plan(std::size_t items, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (items < static_cast<std::size_t>(folds)) {
    throw ConfigError("cross-validation needs at least as many items as folds (" + std::to_string(items) + " < " +
                      std::to_string(folds) + ")");
  }
  std::vector<std::size_t> perm(items);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed, 0xC5));
  rng.shuffle(perm.begin(), perm.end());
  FoldPlan plan{folds, std::vector<int>(items, 0)};
  for (std::size_t i = 0; i < items; ++i) plan.fold_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return plan;
}

CvResult cross_validate(const unet::ModelWeights& initial, const LabeledSet& data, std::span<const HyperParams> grid,
                        const TrainConfig& base, int folds) {
  if (grid.empty()) throw ConfigError("cross-validation grid is empty");
  CvResult res;
  res.plan = make_fold_plan(data.size(), folds, base.seed);
  for (const HyperParams& hp : grid) {
    std::vector<double> per_fold;
    for (int f = 0; f < folds; ++f) {
      LabeledSet train_set;
      LabeledSet val_set;
      for (std::size_t i = 0; i < data.size(); ++i) {
        (res.plan.fold_of[i] == f ? val_set : train_set).push_back(data[i]);
      }
      TrainConfig cfg = base;
      cfg.learning_rate = hp.learning_rate;
      cfg.adam_epsilon = hp.epsilon;
      cfg.seed = mix_seed(base.seed, static_cast<std::uint64_t>(f));
      double d = 0.0;
      try {
        const TrainResult tr = train(initial, train_set, cfg);
        d = eval::dice(evaluate(tr.weights, val_set));
        if (!std::isfinite(d)) d = 0.0;
      } catch (const ComputeError&) {
        d = 0.0;  // diverged
      }
      per_fold.push_back(d);
    }
    res.mean_dice.push_back(std::accumulate(per_fold.begin(), per_fold.end(), 0.0) / folds);
    res.dice.push_back(std::move(per_fold));
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double a = res.mean_dice[k];
    const double b = res.mean_dice[best];
    const bool better = a > b || (a == b && (grid[k].learning_rate < grid[best].learning_rate ||
                                             (grid[k].learning_rate == grid[best].learning_rate &&
                                              grid[k].epsilon < grid[best].epsilon)));
    if (better) best = k;
  }
  res.best = grid[best];
  return res;
}

TrainResult fine_tune_stage1(const unet::ModelWeights& initial, const LabeledSet& paired, const TrainConfig& config) {
  return train(initial, paired, config);
}

PseudoLabelResult pseudo_label_expand(const unet::ModelWeights& intermediate, std::span<const FramePair> pool,
                                      double gate, const segment::PostProcessConfig& post) {
  post.validate();
  PseudoLabelResult res;
  for (const FramePair& fp : pool) {
    require_same_extents(fp.single, fp.averaged, "pseudo_label_expand");
    const BinaryMask from_avg = segment::postprocess(unet::forward(intermediate, fp.averaged), post);
    const BinaryMask from_single = segment::postprocess(unet::forward(intermediate, fp.single), post);
    const double d = eval::dice(eval::confusion(from_single, from_avg));
    const bool ok = d >= gate;
    res.agreement.push_back(d);
    res.accepted_flags.push_back(ok);
    if (ok) res.accepted.push_back({fp.single, from_avg, SourceTag::pseudo_label});
  }
  if (res.accepted.empty()) {
    res.warnings.push_back("pseudo-labeling accepted none of " + std::to_string(pool.size()) +
                           " pairs at gate " + std::to_string(gate));
  }
  return res;
}

TrainResult fine_tune_stage2(const unet::ModelWeights& initial, const LabeledSet& expanded,
                             const TrainConfig& config) {
  return train(initial, expanded, config);
}

}  // namespace octaquant::training
