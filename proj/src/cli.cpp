#include "octaquant/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "octaquant/augment.hpp"
#include "octaquant/error.hpp"
#include "octaquant/eval.hpp"
#include "octaquant/io.hpp"
#include "octaquant/phantom.hpp"
#include "octaquant/quantify.hpp"
#include "octaquant/random.hpp"
#include "octaquant/segment.hpp"
#include "octaquant/unet.hpp"

namespace octaquant::cli {
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::vector<std::vector<std::string>> read_lines(const fs::path& path, std::size_t min_fields, std::size_t max_fields) {
  const std::vector<char> bytes = io::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> row;
    for (std::string f; fields >> f;) row.push_back(f);
    if (row.empty()) continue;
    if (row.size() < min_fields || row.size() > max_fields) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": expected " + std::to_string(min_fields) +
                        (max_fields != min_fields ? "-" + std::to_string(max_fields) : std::string()) +
                        " fields, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string relative_to(const fs::path& p, const fs::path& dir) {
  std::error_code ec;
  const fs::path rel = fs::relative(p, dir.empty() ? fs::path(".") : dir, ec);
  return (ec || rel.empty()) ? p.string() : rel.string();
}

fs::path manifest_dir(const fs::path& path) { return path.has_parent_path() ? path.parent_path() : fs::path("."); }

class Logger {
 public:
  Logger(std::ostream& err, int verbosity) : err_(err), verbosity_(verbosity) {}
  void info(const std::string& msg) const { emit(1, "info", msg); }
  void debug(const std::string& msg) const { emit(2, "debug", msg); }
  void warn(const std::string& msg) const { emit(0, "warning", msg); }

 private:
  void emit(int level, const char* tag, const std::string& msg) const {
    if (verbosity_ < level) return;
    std::lock_guard lock(mutex_);
    err_ << "octaquant: " << tag << ": " << msg << "\n";
  }
  std::ostream& err_;
  int verbosity_;
  mutable std::mutex mutex_;
};

GrayImage load_gray(const fs::path& path, const Logger& log) {
  bool converted = false;
  GrayImage img = io::load_image(path, &converted);
  if (converted) log.warn(path.string() + ": color input converted to grayscale by luminance");
  return img;
}

std::string image_ext(const std::string& format) { return format == "png" ? ".png" : ".pgm"; }

/// Resolved options of the selected subcommand as an INI file that
/// `octaquant --config <file> <subcommand>` re-executes.
void write_run_manifest(const CLI::App& sub, const std::string& path_name, const fs::path& target) {
  std::string body = sub.config_to_str(true, false);
  std::string clean;
  std::istringstream in(body);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#' || line.rfind("config=", 0) == 0) continue;
    // Unset optional values would read back as explicitly given.
    if (line.ends_with("=\"\"") || line.ends_with("=[]")) continue;
    clean += line + "\n";
  }
  std::string section = path_name;
  std::replace(section.begin(), section.end(), ' ', '.');  // [normdb.build]
  const std::string text = "# octaquant " + std::string(kVersion) + " run manifest\n# rerun: octaquant --config " +
                           target.filename().string() + " " + path_name + "\n[" + section + "]\n" + clean;
  io::write_text_atomic(target, text);
}

struct PostFlags {
  float threshold = 0.5f;
  int min_cluster = 30;
  int connectivity = 8;
  segment::PostProcessConfig config() const {
    segment::PostProcessConfig c;
    c.binarize_threshold = threshold;
    c.min_cluster_px = min_cluster;
    if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
    c.connectivity = connectivity == 4 ? morph::Connectivity::four : morph::Connectivity::eight;
    c.validate();
    return c;
  }
  void add(CLI::App* app) {
    app->add_option("--threshold", threshold, "Binarization threshold on the vessel probability")
        ->capture_default_str();
    app->add_option("--min-cluster", min_cluster, "Remove vessel components smaller than this many pixels")
        ->capture_default_str();
    app->add_option("--connectivity", connectivity, "Component connectivity for cluster removal (4 or 8)")
        ->capture_default_str();
  }
};

std::pair<int, int> parse_grid(const std::string& text, const char* what) {
  int a = 0;
  int b = 0;
  char x = 0;
  std::istringstream in(text);
  if (!(in >> a >> x >> b) || (x != 'x' && x != 'X') || a < 1 || b < 1 || !in.eof()) {
    throw ConfigError(std::string(what) + " must look like RxC, got '" + text + "'");
  }
  return {a, b};
}

// ---------------------------------------------------------------- phantom

struct PhantomCmd {
  std::string out;
  std::string style = "scp";
  int count = 1;
  int rows = 256;
  int cols = 256;
  std::uint64_t seed = 0;
  double density = 0.35;
  double spacing_variation = 0.0;
  double snr = 1.5;
  int frames = 10;
  double faz_radius = 20.0;
  int bands = 0;
  double band_width = 16.0;
  int lesion_items = 0;
  double lesion_radius = 20.0;
  std::string format = "pgm";
  int jobs = 1;

  void add(CLI::App* app) {
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--style", style, "Vascular style")->check(CLI::IsMember({"scp", "dvc"}))->capture_default_str();
    app->add_option("--count", count, "Number of phantoms")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--rows", rows, "Image rows")->capture_default_str();
    app->add_option("--cols", cols, "Image columns")->capture_default_str();
    app->add_option("--seed", seed, "Base seed; item i uses a derived stream")->capture_default_str();
    app->add_option("--density", density, "Target vessel density")->capture_default_str();
    app->add_option("--spacing-variation", spacing_variation, "Log-SD of smooth capillary spacing variation (SCP)")
        ->capture_default_str();
    app->add_option("--snr", snr, "Single-frame speckle SNR")->capture_default_str();
    app->add_option("--frames", frames, "Frames averaged for the averaged image")->capture_default_str();
    app->add_option("--faz-radius", faz_radius, "FAZ radius in pixels (0: none)")
        ->capture_default_str();
    app->add_option("--bands", bands, "Projection artifact bands (DVC)")->capture_default_str();
    app->add_option("--band-width", band_width, "Projection band width in pixels")->capture_default_str();
    app->add_option("--lesion-items", lesion_items, "The first N phantoms carry a dropout lesion")
        ->capture_default_str();
    app->add_option("--lesion-radius", lesion_radius, "Lesion radius in pixels")->capture_default_str();
    app->add_option("--format", format, "Raster format")->check(CLI::IsMember({"pgm", "png"}))->capture_default_str();
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  }

  void run(const CLI::App& app, const Logger& log) const {
    phantom::PhantomSpec base;
    base.style = phantom::parse_style(style);
    base.rows = rows;
    base.cols = cols;
    base.vessel_density_target = density;
    base.spacing_variation = spacing_variation;
    base.speckle_snr = snr;
    base.frames_to_average = frames;
    base.faz_radius_px = faz_radius;
    base.projection_band_count = bands;
    base.projection_band_width_px = band_width;
    base.validate();
    phantom::CohortOptions opts;
    opts.count = count;
    opts.seed = seed;
    opts.lesion_count = lesion_items;
    opts.lesion_radius_px = lesion_radius;

    const fs::path dir(out);
    const auto items = phantom::generate_dataset(base, opts);
    const std::string ext = image_ext(format);
    std::vector<ManifestEntry> singles(items.size());
    std::vector<ManifestEntry> averaged(items.size());
    std::vector<PairEntry> pairs(items.size());
    parallel_for(items.size(), jobs, [&](std::size_t i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04zu", style.c_str(), i);
      const phantom::PhantomItem& it = items[i];
      const fs::path single = dir / "images" / (std::string(id) + "_single" + ext);
      const fs::path avg = dir / "images" / (std::string(id) + "_averaged" + ext);
      const fs::path mask = dir / "masks" / (std::string(id) + "_mask" + ext);
      io::save_image(it.frames.single, single);
      io::save_image(it.frames.averaged, avg);
      io::save_mask(it.truth.mask, mask);
      if (bands > 0) io::save_mask(it.truth.bands, dir / "masks" / (std::string(id) + "_bands" + ext));
      singles[i] = {single, mask, training::SourceTag::manual};
      averaged[i] = {avg, mask, training::SourceTag::averaged_auto};
      pairs[i] = {single, avg};
    });
    write_manifest(dir / "manifest.txt", singles);
    write_manifest(dir / "averaged.txt", averaged);
    write_pair_manifest(dir / "pairs.txt", pairs);
    write_run_manifest(app, "phantom", dir / "run-manifest.ini");
    log.info("wrote " + std::to_string(items.size()) + " phantoms to " + dir.string());
  }
};

// ---------------------------------------------------------------- augment

struct AugmentCmd {
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  int plain_rotations = 3;
  int contrast_rotations = 5;
  int strip_min = 4;
  int strip_max = 12;
  std::vector<std::string> contrast{"clahe", "percentile"};
  bool shuffle_contrast = false;
  int clahe_tiles = 8;
  double clahe_clip = 2.0;
  double low = 1.0;
  double high = 99.0;
  std::string format = "pgm";
  int jobs = 1;

  void add(CLI::App* app) {
    app->add_option("--manifest", manifest, "Training manifest to expand")->required();
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--seed", seed, "Strip-shuffle seed")->capture_default_str();
    app->add_option("--plain-rotations", plain_rotations, "Extra 90-degree orientations per image")
        ->capture_default_str();
    app->add_option("--contrast-rotations", contrast_rotations, "Contrast variants per operator")
        ->capture_default_str();
    app->add_option("--strip-min", strip_min, "Minimum strips")->capture_default_str();
    app->add_option("--strip-max", strip_max, "Maximum strips")->capture_default_str();
    app->add_option("--contrast", contrast, "Contrast operators (clahe, percentile)")->capture_default_str();
    app->add_flag("--shuffle-contrast", shuffle_contrast, "Also strip-shuffle contrast variants");
    app->add_option("--clahe-tiles", clahe_tiles, "CLAHE tiles per axis")->capture_default_str();
    app->add_option("--clahe-clip", clahe_clip, "CLAHE clip limit")->capture_default_str();
    app->add_option("--low", low, "Lower remap percentile")->capture_default_str();
    app->add_option("--high", high, "Upper remap percentile")->capture_default_str();
    app->add_option("--format", format, "Raster format")->check(CLI::IsMember({"pgm", "png"}))->capture_default_str();
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  }

  void run(const CLI::App& app, const Logger& log) const {
    augment::AugmentPlan plan;
    plan.seed = seed;
    plan.plain_rotations = plain_rotations;
    plan.contrast_rotations = contrast_rotations;
    plan.strip_min = strip_min;
    plan.strip_max = strip_max;
    plan.contrast_ops.clear();
    for (const auto& c : contrast) plan.contrast_ops.push_back(augment::parse_contrast_op(c));
    plan.shuffle_contrast_variants = shuffle_contrast;
    plan.clahe.tiles_x = plan.clahe.tiles_y = clahe_tiles;
    plan.clahe.clip_limit = clahe_clip;
    plan.low_percentile = low;
    plan.high_percentile = high;
    plan.validate();

    const auto entries = read_manifest(manifest);
    const fs::path dir(out);
    const std::string ext = image_ext(format);
    std::vector<std::vector<ManifestEntry>> produced(entries.size());
    parallel_for(entries.size(), jobs, [&](std::size_t i) {
      const augment::ImagePair pair{load_gray(entries[i].image, log), io::load_mask(entries[i].mask)};
      augment::AugmentPlan item_plan = plan;
      item_plan.seed = mix_seed(plan.seed, i);
      const std::string stem = entries[i].image.stem().string();
      for (const auto& a : augment::expand(pair, item_plan)) {
        const fs::path img = dir / "images" / (stem + "_" + a.tag + ext);
        const fs::path mask = dir / "masks" / (stem + "_" + a.tag + "_mask" + ext);
        io::save_image(a.pair.image, img);
        io::save_mask(a.pair.mask, mask);
        produced[i].push_back({img, mask, entries[i].tag});
      }
    });
    std::vector<ManifestEntry> all;
    for (auto& p : produced) all.insert(all.end(), p.begin(), p.end());
    write_manifest(dir / "manifest.txt", all);
    write_run_manifest(app, "augment", dir / "run-manifest.ini");
    log.info("expanded " + std::to_string(entries.size()) + " pairs into " + std::to_string(all.size()));
  }
};

// ---------------------------------------------------------------- train

struct TrainCmd {
  std::string stage = "initial";
  std::string manifest;
  std::string out;
  std::string history;
  std::string init;
  std::string intermediate;
  std::string pool;
  double gate = 0.7;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<double> eps;
  int batch = 4;
  std::uint64_t seed = 0;
  std::string tiles = "2x2";
  int depth = 4;
  int base = 16;
  double dropout = 0.5;
  std::vector<double> lr_grid{1e-2, 1e-3, 1e-4};
  std::vector<double> eps_grid{1e-2, 1e-5, 1e-8};
  int folds = 3;
  std::string cv_out;

  void add(CLI::App* app) {
    app->add_option("--stage", stage, "initial | stage1 | stage2 | cv")
        ->check(CLI::IsMember({"initial", "stage1", "stage2", "cv"}))
        ->capture_default_str();
    app->add_option("--manifest", manifest, "Training manifest (image mask tag)")->required();
    app->add_option("--out", out, "Output weight file");
    app->add_option("--history", history, "History CSV (default: <out>.history.csv)");
    app->add_option("--init", init, "Starting weights (required for stage1/stage2)");
    app->add_option("--intermediate", intermediate, "Stage-1 weights used to pseudo-label (stage2)");
    app->add_option("--pool", pool, "Pair manifest (single averaged) to pseudo-label (stage2)");
    app->add_option("--gate", gate, "Pseudo-label agreement Dice gate")->capture_default_str();
    app->add_option("--epochs", epochs, "Epochs (preset: 120 initial, 60 fine-tune)");
    app->add_option("--lr", lr, "Learning rate (preset: 1e-4 initial, 1e-2 fine-tune)");
    app->add_option("--eps", eps, "Adam epsilon (preset: 1e-5 initial, 1e-2 fine-tune)");
    app->add_option("--batch", batch, "Batch size")->capture_default_str();
    app->add_option("--seed", seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
    app->add_option("--tiles", tiles, "Tile grid each image is split into, RxC")->capture_default_str();
    app->add_option("--depth", depth, "U-Net depth for a fresh network")->capture_default_str();
    app->add_option("--base", base, "Base channel count for a fresh network")->capture_default_str();
    app->add_option("--dropout", dropout, "Dropout probability for a fresh network")->capture_default_str();
    app->add_option("--lr-grid", lr_grid, "Cross-validation learning rates")->capture_default_str();
    app->add_option("--eps-grid", eps_grid, "Cross-validation epsilons")->capture_default_str();
    app->add_option("--folds", folds, "Cross-validation folds")->capture_default_str();
    app->add_option("--cv-out", cv_out, "Cross-validation CSV (default: stdout)");
  }

  unet::ModelWeights starting_weights() const {
    if (!init.empty()) return unet::load_weights(init);
    if (stage == "stage1" || stage == "stage2") throw ConfigError("--init is required for " + stage);
    unet::UnetConfig c;
    c.depth = depth;
    c.base_channels = base;
    c.dropout_p = static_cast<float>(dropout);
    c.validate();
    return unet::build(c, mix_seed(seed, 0x1A17));
  }

  training::TrainConfig config() const {
    training::TrainConfig c = stage == "initial" || stage == "cv" ? training::TrainConfig::initial()
                                                                  : training::TrainConfig::fine_tune();
    if (epochs) c.epochs = *epochs;
    if (lr) c.learning_rate = *lr;
    if (eps) c.adam_epsilon = *eps;
    c.batch_size = batch;
    c.seed = seed;
    std::tie(c.tile_rows, c.tile_cols) = parse_grid(tiles, "--tiles");
    c.validate();
    return c;
  }

  void run(const CLI::App& app, std::ostream& os, const Logger& log) const {
    const training::TrainConfig cfg = config();
    const training::LabeledSet data = load_labeled_set(read_manifest(manifest));
    const unet::ModelWeights start = starting_weights();

    if (stage == "cv") {
      std::vector<training::HyperParams> grid;
      for (double l : lr_grid) {
        for (double e : eps_grid) grid.push_back({l, e});
      }
      const auto res = training::cross_validate(start, data, grid, cfg, folds);
      io::CsvTable t({"learning_rate", "epsilon", "mean_dice"});
      for (std::size_t k = 0; k < grid.size(); ++k) {
        t.add_row({io::format_number(grid[k].learning_rate), io::format_number(grid[k].epsilon),
                   io::format_number(res.mean_dice[k])});
      }
      if (cv_out.empty()) {
        os << t.str();
      } else {
        io::save_csv(t, cv_out);
        write_run_manifest(app, "train", fs::path(cv_out).string() + ".run.ini");
      }
      log.info("best learning rate " + io::format_number(res.best.learning_rate) + ", epsilon " +
               io::format_number(res.best.epsilon));
      return;
    }
    if (out.empty()) throw ConfigError("--out is required for stage " + stage);

    training::LabeledSet set = data;
    if (stage == "stage2") {
      if (intermediate.empty() || pool.empty()) throw ConfigError("stage2 needs --intermediate and --pool");
      const unet::ModelWeights mid = unet::load_weights(intermediate);
      std::vector<training::FramePair> frames;
      for (const PairEntry& p : read_pair_manifest(pool)) {
        frames.push_back({load_gray(p.single, log), load_gray(p.averaged, log)});
      }
      const auto pl = training::pseudo_label_expand(mid, frames, gate);
      for (const auto& w : pl.warnings) log.warn(w);
      log.info("pseudo-labeling accepted " + std::to_string(pl.accepted.size()) + " of " +
               std::to_string(frames.size()));
      set.insert(set.end(), pl.accepted.begin(), pl.accepted.end());
    }
    const auto res = training::train(start, set, cfg, [&](const training::EpochStats& e) {
      log.debug("epoch " + std::to_string(e.epoch) + " loss " + io::format_number(e.loss) + " dice " +
                io::format_number(e.dice));
    });
    unet::save_weights(res.weights, out);
    io::CsvTable h({"epoch", "loss", "dice"});
    for (const auto& e : res.history) {
      h.add_row({std::to_string(e.epoch), io::format_number(e.loss), io::format_number(e.dice)});
    }
    io::save_csv(h, history.empty() ? out + ".history.csv" : history);
    write_run_manifest(app, "train", out + ".run.ini");
    log.info("trained " + std::to_string(res.history.size()) + " epochs on " + std::to_string(set.size()) +
             " items");
  }
};

// ---------------------------------------------------------------- segment

struct SegmentCmd {
  std::string weights;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string out_dir;
  PostFlags post;
  int tile = 256;
  std::string format = "pgm";
  int jobs = 1;

  void add(CLI::App* app) {
    app->add_option("--weights", weights, "Weight file")->required()->envname("OCTAQUANT_WEIGHTS");
    app->add_option("--in", inputs, "Input image(s)")->required();
    app->add_option("--out", outputs, "Output mask path(s), one per input");
    app->add_option("--out-dir", out_dir, "Directory for <stem>_mask outputs");
    post.add(app);
    app->add_option("--tile", tile, "Inference tile extent in pixels")->capture_default_str();
    app->add_option("--format", format, "Raster format for --out-dir")
        ->check(CLI::IsMember({"pgm", "png"}))
        ->capture_default_str();
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  }

  void run(const CLI::App& app, const Logger& log) const {
    if (outputs.empty() == out_dir.empty()) throw ConfigError("give exactly one of --out or --out-dir");
    if (!outputs.empty() && outputs.size() != inputs.size()) {
      throw ConfigError("--out count (" + std::to_string(outputs.size()) + ") must match --in count (" +
                        std::to_string(inputs.size()) + ")");
    }
    const segment::PostProcessConfig pc = post.config();
    const unet::ModelWeights w = unet::load_weights(weights);
    std::vector<fs::path> targets;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      targets.push_back(outputs.empty()
                            ? fs::path(out_dir) / (fs::path(inputs[i]).stem().string() + "_mask" + image_ext(format))
                            : fs::path(outputs[i]));
    }
    parallel_for(inputs.size(), jobs, [&](std::size_t i) {
      const GrayImage img = load_gray(inputs[i], log);
      const ProbabilityMap p = segment::infer_tiled(w, img, {tile, tile});
      io::save_mask(segment::postprocess(p, pc), targets[i]);
    });
    const fs::path manifest_target =
        out_dir.empty() ? fs::path(targets.front().string() + ".run.ini") : fs::path(out_dir) / "run-manifest.ini";
    write_run_manifest(app, "segment", manifest_target);
    log.info("segmented " + std::to_string(inputs.size()) + " image(s)");
  }
};

// ---------------------------------------------------------------- quantify

struct QuantifyFlags {
  std::string plexus = "scp";
  double px_per_mm = 0.0;
  std::string laterality = "od";
  double faz_window = 0.2;
  int artifact_radius = 6;

  void add(CLI::App* app) {
    app->add_option("--plexus", plexus, "scp or dvc")->check(CLI::IsMember({"scp", "dvc"}))->capture_default_str();
    app->add_option("--px-per-mm", px_per_mm, "Pixels per millimetre (0: image spans 6 mm)")->capture_default_str();
    app->add_option("--laterality", laterality, "od or os")->check(CLI::IsMember({"od", "os"}))->capture_default_str();
    app->add_option("--faz-window", faz_window, "Central window fraction searched for the FAZ")
        ->capture_default_str();
    app->add_option("--artifact-radius", artifact_radius, "Opening radius for DVC projection artifacts")
        ->capture_default_str();
  }
  quantify::QuantifyConfig config() const {
    quantify::QuantifyConfig c;
    c.px_per_mm = px_per_mm;
    c.laterality = laterality == "os" ? quantify::Laterality::os : quantify::Laterality::od;
    c.faz_window_fraction = faz_window;
    c.artifact_radius_px = artifact_radius;
    return c;
  }
};

struct QuantifyCmd {
  std::string mask;
  std::string weights;
  std::string image;
  std::string normdb;
  std::string out_dir;
  std::string id;
  std::string format = "pgm";
  QuantifyFlags flags;
  PostFlags post;

  void add(CLI::App* app) {
    auto* m = app->add_option("--mask", mask, "Vessel mask to quantify");
    auto* w = app->add_option("--weights", weights, "Weights for segmenting --image")->envname("OCTAQUANT_WEIGHTS");
    auto* i = app->add_option("--image", image, "Image segmented with --weights before quantification");
    m->excludes(i);
    i->needs(w);
    app->add_option("--normdb", normdb, "Normative database for z-scores")->envname("OCTAQUANT_NORMDB");
    app->add_option("--out-dir", out_dir, "Output directory")->required();
    app->add_option("--id", id, "Image id (default: input stem)");
    app->add_option("--format", format, "Raster format")->check(CLI::IsMember({"pgm", "png"}))->capture_default_str();
    flags.add(app);
    post.add(app);
  }

  void run(const CLI::App& app, const Logger& log) const {
    if (mask.empty() == image.empty()) throw ConfigError("give exactly one of --mask or --image");
    GrayImage background;
    BinaryMask m;
    if (!mask.empty()) {
      m = io::load_mask(mask);
    } else {
      background = load_gray(image, log);
      m = segment::postprocess(segment::infer_tiled(unet::load_weights(weights), background, {256, 256}),
                               post.config());
    }
    const std::string name = id.empty() ? fs::path(mask.empty() ? image : mask).stem().string() : id;
    const quantify::IcaReport report =
        quantify::analyze(m, quantify::parse_plexus(flags.plexus), flags.config(), name);
    const quantify::NormativeDb db = normdb.empty() ? quantify::NormativeDb{} : quantify::NormativeDb::load(normdb);
    if (normdb.empty()) log.info("no normative database given; z-scores are unavailable");
    const quantify::SdMap sd = quantify::sd_map(report, db, image.empty() ? nullptr : &background);

    const fs::path dir(out_dir);
    io::save_csv(sd.csv(), dir / "report.csv");
    io::CsvTable dens({"region", "vessel_px", "measured_px", "density"});
    for (std::size_t r = 0; r < quantify::kRegionCount; ++r) {
      const auto& d = report.densities[r];
      dens.add_row({std::string(quantify::to_string(static_cast<quantify::EtdrsRegion>(r))),
                    std::to_string(d.vessel_px), std::to_string(d.measured_px), io::format_number(d.density)});
    }
    io::save_csv(dens, dir / "density.csv");
    io::save_overlay(sd.overlay, dir / ("overlay" + std::string(format == "png" ? ".png" : ".ppm")));
    io::save_mask(report.mask, dir / ("mask" + image_ext(format)));
    write_run_manifest(app, "quantify", dir / "run-manifest.ini");
    log.info(std::to_string(report.icas.size()) + " ICAs quantified");
  }
};

// ---------------------------------------------------------------- normdb

struct NormdbBuildCmd {
  std::vector<std::string> masks;
  std::string list;
  std::string out;
  QuantifyFlags flags;
  int jobs = 1;

  void add(CLI::App* app) {
    app->add_option("--mask", masks, "Control vessel mask(s)");
    app->add_option("--list", list, "File with one control mask path per line, or a training manifest (mask column)");
    app->add_option("--out", out, "Database file")->required();
    flags.add(app);
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  }

  void run(const CLI::App& app, const Logger& log) const {
    std::vector<fs::path> paths(masks.begin(), masks.end());
    if (!list.empty()) {
      for (const auto& row : read_lines(list, 1, 3)) {
        paths.push_back(resolve(manifest_dir(list), row.size() == 1 ? row[0] : row[1]));
      }
    }
    if (paths.size() < 2) throw ConfigError("a normative database needs at least 2 control masks");
    const quantify::Plexus plexus = quantify::parse_plexus(flags.plexus);
    const quantify::QuantifyConfig qc = flags.config();
    std::vector<quantify::IcaReport> reports(paths.size());
    parallel_for(paths.size(), jobs, [&](std::size_t i) {
      reports[i] = quantify::analyze(io::load_mask(paths[i]), plexus, qc, paths[i].stem().string());
    });
    const quantify::NormativeDb db = quantify::build_normative_db(reports);
    db.save(out);
    write_run_manifest(app, "normdb build", out + ".run.ini");
    log.info("normative database from " + std::to_string(paths.size()) + " controls, " +
             std::to_string(db.entries().size()) + " entries");
  }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
  std::string pred;
  std::string truth;
  std::string manifest;
  std::string out;
  int jobs = 1;

  void add(CLI::App* app) {
    auto* a = app->add_option("--pred", pred, "Predicted mask");
    auto* b = app->add_option("--truth", truth, "Reference mask");
    auto* m = app->add_option("--manifest", manifest, "Lines of 'pred truth [id]'");
    a->needs(b);
    b->needs(a);
    m->excludes(a)->excludes(b);
    app->add_option("--out", out, "CSV output (default: stdout)");
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  }

  void run(const CLI::App& app, std::ostream& os, const Logger&) const {
    struct Item {
      std::string id;
      fs::path a, b;
    };
    std::vector<Item> items;
    if (!manifest.empty()) {
      const auto rows = read_lines(manifest, 2, 3);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        items.push_back({rows[i].size() == 3 ? rows[i][2] : std::to_string(i),
                         resolve(manifest_dir(manifest), rows[i][0]), resolve(manifest_dir(manifest), rows[i][1])});
      }
    } else if (!pred.empty()) {
      items.push_back({"0", pred, truth});
    } else {
      throw ConfigError("give --pred and --truth, or --manifest");
    }
    std::vector<eval::EvalCounts> counts(items.size());
    parallel_for(items.size(), jobs, [&](std::size_t i) {
      counts[i] = eval::confusion(io::load_mask(items[i].a), io::load_mask(items[i].b));
    });
    io::CsvTable t({"pair_id", "TP", "FP", "FN", "TN", "accuracy", "dice"});
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& c = counts[i];
      t.add_row({items[i].id, std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.fn), std::to_string(c.tn),
                 io::format_number(eval::accuracy(c)), io::format_number(eval::dice(c))});
    }
    if (out.empty()) {
      os << t.str();
    } else {
      io::save_csv(t, out);
      write_run_manifest(app, "eval", out + ".run.ini");
    }
  }
};

/// Moves "--config X" / "--config=X" to the front so a config file may be
/// given after the subcommand, where CLI11 would not read it.
std::vector<std::string> hoist_config(std::span<const std::string> args) {
  std::vector<std::string> front;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      front = {args[i], args[i + 1]};
      ++i;
    } else if (args[i].rfind("--config=", 0) == 0) {
      front = {args[i]};
    } else {
      rest.push_back(args[i]);
    }
  }
  front.insert(front.end(), rest.begin(), rest.end());
  return front;
}

const CLI::App* deepest_parsed(const CLI::App* app) {
  for (const CLI::App* sub : app->get_subcommands()) return deepest_parsed(sub);
  return app;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::vector<ManifestEntry> out;
  const fs::path base = manifest_dir(path);
  for (const auto& row : read_lines(path, 2, 3)) {
    out.push_back({resolve(base, row[0]), resolve(base, row[1]),
                   row.size() == 3 ? training::parse_source_tag(row[2]) : training::SourceTag::manual});
  }
  return out;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
  const fs::path base = manifest_dir(path);
  std::string text = "# image mask tag\n";
  for (const auto& e : entries) {
    text += relative_to(e.image, base) + " " + relative_to(e.mask, base) + " " + training::to_string(e.tag) + "\n";
  }
  io::write_text_atomic(path, text);
}

training::LabeledSet load_labeled_set(std::span<const ManifestEntry> entries) {
  training::LabeledSet set;
  for (const auto& e : entries) {
    training::LabeledItem item{io::load_image(e.image), io::load_mask(e.mask), e.tag};
    require_same_extents(item.image, item.mask, e.image.string().c_str());
    set.push_back(std::move(item));
  }
  return set;
}

std::vector<PairEntry> read_pair_manifest(const fs::path& path) {
  std::vector<PairEntry> out;
  const fs::path base = manifest_dir(path);
  for (const auto& row : read_lines(path, 2, 2)) out.push_back({resolve(base, row[0]), resolve(base, row[1])});
  return out;
}

void write_pair_manifest(const fs::path& path, std::span<const PairEntry> entries) {
  const fs::path base = manifest_dir(path);
  std::string text = "# single averaged\n";
  for (const auto& e : entries) text += relative_to(e.single, base) + " " + relative_to(e.averaged, base) + "\n";
  io::write_text_atomic(path, text);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(jobs));
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int run(std::span<const std::string> raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"OCT-A vessel segmentation and inter-capillary area quantification", "octaquant"};
  app.set_config("--config", "", "INI file with one [subcommand] section of key = value settings");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);
  int verbose = 0;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "More log output (repeatable)");
  app.add_flag("-q,--quiet", quiet, "Only errors");

  PhantomCmd phantom_cmd;
  AugmentCmd augment_cmd;
  TrainCmd train_cmd;
  SegmentCmd segment_cmd;
  QuantifyCmd quantify_cmd;
  NormdbBuildCmd normdb_cmd;
  EvalCmd eval_cmd;
  auto* phantom = app.add_subcommand("phantom", "Generate synthetic OCT-A phantoms");
  phantom_cmd.add(phantom);
  auto* augment = app.add_subcommand("augment", "Expand a training manifest by augmentation");
  augment_cmd.add(augment);
  auto* train = app.add_subcommand("train", "Train or fine-tune the U-Net");
  train_cmd.add(train);
  auto* segment = app.add_subcommand("segment", "Segment images into vessel masks");
  segment_cmd.add(segment);
  auto* quantify = app.add_subcommand("quantify", "ICA, FAZ and density report with an SD overlay");
  quantify_cmd.add(quantify);
  auto* normdb = app.add_subcommand("normdb", "Normative database tools");
  normdb->require_subcommand(1);
  auto* normdb_build = normdb->add_subcommand("build", "Build a normative database from control masks");
  normdb_cmd.add(normdb_build);
  auto* evaluate = app.add_subcommand("eval", "Accuracy and Dice of mask pairs");
  eval_cmd.add(evaluate);

  std::vector<std::string> args = hoist_config(raw_args);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << deepest_parsed(&app)->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "octaquant: usage error: " << e.what() << "\n\n" << deepest_parsed(&app)->help();
    return kExitUsage;
  }

  const Logger log(err, quiet ? -1 : verbose + 1);
  try {
    if (phantom->parsed()) phantom_cmd.run(*phantom, log);
    if (augment->parsed()) augment_cmd.run(*augment, log);
    if (train->parsed()) train_cmd.run(*train, out, log);
    if (segment->parsed()) segment_cmd.run(*segment, log);
    if (quantify->parsed()) quantify_cmd.run(*quantify, log);
    if (normdb_build->parsed()) normdb_cmd.run(*normdb_build, log);
    if (evaluate->parsed()) eval_cmd.run(*evaluate, out, log);
  } catch (const ConfigError& e) {
    err << "octaquant: usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "octaquant: i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "octaquant: input error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ShapeError& e) {
    err << "octaquant: compute error: " << e.what() << "\n";
    return kExitCompute;
  } catch (const ComputeError& e) {
    err << "octaquant: compute error: " << e.what() << "\n";
    return kExitCompute;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "octaquant: i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "octaquant: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace octaquant::cli
