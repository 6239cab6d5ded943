#include "octaquant/unet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "octaquant/io.hpp"
#include "octaquant/nn/layers.hpp"
#include "octaquant/random.hpp"

namespace octaquant::unet {
namespace {

struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  bool normalized = true;  // conv -> batchnorm -> relu6 -> dropout
};

int level_channels(const UnetConfig& c, int level) { return c.base_channels << level; }

std::vector<ConvSpec> layout(const UnetConfig& c) {
  std::vector<ConvSpec> specs;
  const int k = c.kernel_size;
  for (int level = 0; level < c.depth; ++level) {
    const int in = level == 0 ? c.in_channels : level_channels(c, level - 1);
    const int ch = level_channels(c, level);
    const std::string prefix = "enc" + std::to_string(level);
    specs.push_back({prefix + ".conv0", in, ch, k, true});
    specs.push_back({prefix + ".conv1", ch, ch, k, true});
  }
  for (int level = c.depth - 2; level >= 0; --level) {
    const int ch = level_channels(c, level);
    const std::string prefix = "dec" + std::to_string(level);
    specs.push_back({prefix + ".up", level_channels(c, level + 1), ch, k, true});
    specs.push_back({prefix + ".conv0", 2 * ch, ch, k, true});
    specs.push_back({prefix + ".conv1", ch, ch, k, true});
  }
  specs.push_back({"head", level_channels(c, 0), c.out_classes, 1, false});
  return specs;
}

/// Walks the layout in order, consuming tape handles and buffers.
template <typename T>
class Recorder {
 public:
  Recorder(nn::Tape<T>& tape, const UnetConfig& config, std::span<const nn::Var> params,
           std::span<nn::BasicTensor<T>> buffers, Mode mode, std::uint64_t seed)
      : tape_(tape), config_(config), params_(params), buffers_(buffers), mode_(mode), seed_(seed) {}

  nn::Var block(nn::Var x) {
    const int k = config_.kernel_size;
    const nn::Var kernels = next_param();
    const nn::Var bias = next_param();
    nn::Var y = nn::conv2d(tape_, x, kernels, bias, k / 2);
    const nn::Var gamma = next_param();
    const nn::Var beta = next_param();
    y = nn::batchnorm(tape_, y, gamma, beta, buffers_[buffer_], buffers_[buffer_ + 1], mode_);
    buffer_ += 2;
    y = nn::relu6(tape_, y);
    return nn::dropout(tape_, y, config_.dropout_p, mix_seed(seed_, dropout_layer_++), mode_);
  }

  nn::Var head(nn::Var x) {
    const nn::Var kernels = next_param();
    const nn::Var bias = next_param();
    return nn::conv2d(tape_, x, kernels, bias, 0);
  }

 private:
  nn::Var next_param() { return params_[param_++]; }

  nn::Tape<T>& tape_;
  const UnetConfig& config_;
  std::span<const nn::Var> params_;
  std::span<nn::BasicTensor<T>> buffers_;
  Mode mode_;
  std::uint64_t seed_;
  std::size_t param_ = 0;
  std::size_t buffer_ = 0;
  std::uint64_t dropout_layer_ = 0;
};

std::size_t expected_parameter_tensors(const UnetConfig& c) {
  std::size_t n = 0;
  for (const ConvSpec& s : layout(c)) n += s.normalized ? 4 : 2;
  return n;
}

std::size_t expected_buffer_tensors(const UnetConfig& c) {
  std::size_t n = 0;
  for (const ConvSpec& s : layout(c)) n += s.normalized ? 2 : 0;
  return n;
}

// ------------------------------------------------------------- weight file

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u16(std::uint16_t v) { little(v); }
  void u32(std::uint32_t v) { little(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<char> take() { return std::move(out_); }

 private:
  template <typename U>
  void little(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const char> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const std::string& field) const {
    if (remaining() < n) {
      throw FormatError("weight file truncated: " + field + " needs " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", only " + std::to_string(remaining()) + " remain");
    }
  }
  std::uint16_t u16(const std::string& field) { return little<std::uint16_t>(field); }
  std::uint32_t u32(const std::string& field) { return little<std::uint32_t>(field); }
  float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }
  std::string text(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  template <typename U>
  U little(const std::string& field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v = static_cast<U>(v | (static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i)));
    }
    pos_ += sizeof(U);
    return v;
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
};

struct StoredLayer {
  std::string name;
  nn::Tensor value;
};

struct StoredFile {
  UnetConfig config;
  std::vector<StoredLayer> layers;
};

StoredFile parse(std::span<const char> bytes) {
  Reader r(bytes);
  const std::string magic = r.text(4, "magic");
  if (magic != std::string(kWeightMagic, 4)) throw FormatError("weight file: bad magic at offset 0 (expected OCTW)");
  const std::uint16_t version = r.u16("version");
  if (version != kWeightVersion) {
    throw FormatError("weight file: unsupported version " + std::to_string(version) + " at offset 4");
  }
  StoredFile f;
  f.config.depth = static_cast<int>(r.u32("config.depth"));
  f.config.base_channels = static_cast<int>(r.u32("config.base_channels"));
  f.config.in_channels = static_cast<int>(r.u32("config.in_channels"));
  f.config.out_classes = static_cast<int>(r.u32("config.out_classes"));
  f.config.kernel_size = static_cast<int>(r.u32("config.kernel_size"));
  f.config.dropout_p = r.f32("config.dropout_p");
  try {
    f.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weight file: invalid config block: ") + e.what());
  }
  const std::uint32_t count = r.u32("layer count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "layer " + std::to_string(i);
    const std::uint32_t name_len = r.u32(where + " name length");
    if (name_len > 4096) throw FormatError("weight file: implausible name length at offset " + std::to_string(r.offset() - 4));
    StoredLayer layer;
    layer.name = r.text(name_len, where + " name");
    const std::uint32_t rank = r.u32("layer '" + layer.name + "' rank");
    if (rank == 0 || rank > 8) {
      throw FormatError("weight file: layer '" + layer.name + "' has invalid rank " + std::to_string(rank));
    }
    nn::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t extent = r.u32("layer '" + layer.name + "' extent");
      if (extent == 0 || extent > (1u << 24)) {
        throw FormatError("weight file: layer '" + layer.name + "' has invalid extent " + std::to_string(extent));
      }
      shape.push_back(static_cast<int>(extent));
      n *= extent;
    }
    r.need(n * 4, "layer '" + layer.name + "' values (shape " + nn::to_string(shape) + ")");
    std::vector<float> values(n);
    for (float& v : values) v = r.f32(layer.name);
    layer.value = nn::Tensor(std::move(shape), std::move(values));
    f.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) {
    throw FormatError("weight file: " + std::to_string(r.remaining()) + " trailing bytes at offset " +
                      std::to_string(r.offset()));
  }
  return f;
}

/// Matches stored layers against the skeleton of `config`, in order.
ModelWeights assemble(StoredFile file, const UnetConfig& config) {
  ModelWeights skeleton = build(config, 0);
  const std::size_t expected = skeleton.parameters.size() + skeleton.buffers.size();
  for (std::size_t i = 0; i < expected; ++i) {
    const bool is_param = i < skeleton.parameters.size();
    const NamedTensor& want =
        is_param ? skeleton.parameters[i] : skeleton.buffers[i - skeleton.parameters.size()];
    if (i >= file.layers.size()) {
      throw ShapeError("weights do not match config: layer '" + want.name + "' missing (file has " +
                       std::to_string(file.layers.size()) + " layers)");
    }
    const StoredLayer& got = file.layers[i];
    if (got.name != want.name || got.value.shape() != want.value.shape()) {
      throw ShapeError("weights do not match config: first mismatched layer '" + want.name + "' " +
                       nn::to_string(want.value.shape()) + ", file has '" + got.name + "' " +
                       nn::to_string(got.value.shape()));
    }
  }
  if (file.layers.size() != expected) {
    throw ShapeError("weights do not match config: unexpected extra layer '" + file.layers[expected].name + "'");
  }
  ModelWeights w;
  w.config = config;
  for (std::size_t i = 0; i < expected; ++i) {
    NamedTensor t{std::move(file.layers[i].name), std::move(file.layers[i].value)};
    (i < skeleton.parameters.size() ? w.parameters : w.buffers).push_back(std::move(t));
  }
  return w;
}

}  // namespace

void UnetConfig::validate() const {
  if (depth < 2 || depth > 8) throw ConfigError("unet: depth must lie in [2,8], got " + std::to_string(depth));
  if (base_channels < 1 || base_channels > 1024) throw ConfigError("unet: base_channels must be positive");
  if (in_channels != 1) throw ConfigError("unet: only single-channel input is supported");
  if (out_classes != 2) throw ConfigError("unet: exactly two output classes are supported");
  if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) throw ConfigError("unet: dropout_p must lie in [0,1)");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("unet: kernel_size must be odd");
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& p : parameters) n += p.value.size();
  return n;
}

ModelWeights build(const UnetConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights w;
  w.config = config;
  Rng rng(mix_seed(seed, 0x0C7A));
  for (const ConvSpec& s : layout(config)) {
    const int fan_in = s.in_channels * s.kernel * s.kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    nn::Tensor kernels({s.out_channels, s.in_channels, s.kernel, s.kernel});
    for (float& v : kernels.values()) v = static_cast<float>(stddev * rng.normal());
    w.parameters.push_back({s.name + ".weight", std::move(kernels)});
    w.parameters.push_back({s.name + ".bias", nn::Tensor({s.out_channels}, 0.0f)});
    if (s.normalized) {
      w.parameters.push_back({s.name + ".bn.gamma", nn::Tensor({s.out_channels}, 1.0f)});
      w.parameters.push_back({s.name + ".bn.beta", nn::Tensor({s.out_channels}, 0.0f)});
      w.buffers.push_back({s.name + ".bn.running_mean", nn::Tensor({s.out_channels}, 0.0f)});
      w.buffers.push_back({s.name + ".bn.running_var", nn::Tensor({s.out_channels}, 1.0f)});
    }
  }
  return w;
}

void check_extents(const UnetConfig& config, int rows, int cols) {
  const int d = config.divisor();
  if (rows <= 0 || cols <= 0 || rows % d != 0 || cols % d != 0) {
    throw ShapeError("unet: image " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " is not divisible by " + std::to_string(d) + " (2^(depth-1)); tile or pad the input");
  }
}

template <typename T>
nn::Var logits(nn::Tape<T>& tape, const UnetConfig& config, std::span<const nn::Var> params,
               std::span<nn::BasicTensor<T>> buffers, nn::Var input, Mode mode, std::uint64_t dropout_seed) {
  config.validate();
  if (params.size() != expected_parameter_tensors(config) || buffers.size() != expected_buffer_tensors(config)) {
    throw ShapeError("unet: parameter/buffer count does not match config");
  }
  const nn::BasicTensor<T>& in = tape.value(input);
  if (in.rank() != 4 || in.dim(1) != config.in_channels) {
    throw ShapeError("unet: input must be [N,1,H,W], got " + nn::to_string(in.shape()));
  }
  check_extents(config, in.dim(2), in.dim(3));

  Recorder<T> rec(tape, config, params, buffers, mode, dropout_seed);
  std::vector<nn::Var> skips;
  nn::Var x = input;
  for (int level = 0; level < config.depth; ++level) {
    x = rec.block(x);
    x = rec.block(x);
    if (level + 1 < config.depth) {
      skips.push_back(x);
      x = nn::maxpool2(tape, x);
    }
  }
  for (int level = config.depth - 2; level >= 0; --level) {
    x = nn::upsample_nearest2(tape, x);
    x = rec.block(x);
    x = nn::concat_channels(tape, skips[static_cast<std::size_t>(level)], x);
    x = rec.block(x);
    x = rec.block(x);
  }
  return rec.head(x);
}

template nn::Var logits<float>(nn::Tape<float>&, const UnetConfig&, std::span<const nn::Var>,
                               std::span<nn::BasicTensor<float>>, nn::Var, Mode, std::uint64_t);
template nn::Var logits<double>(nn::Tape<double>&, const UnetConfig&, std::span<const nn::Var>,
                                std::span<nn::BasicTensor<double>>, nn::Var, Mode, std::uint64_t);

nn::Tensor to_input(std::span<const GrayImage> images) {
  if (images.empty()) throw ShapeError("unet: empty image batch");
  const int rows = images[0].rows();
  const int cols = images[0].cols();
  nn::Tensor x({static_cast<int>(images.size()), 1, rows, cols});
  std::size_t o = 0;
  for (const GrayImage& img : images) {
    if (img.rows() != rows || img.cols() != cols) throw ShapeError("unet: batch images differ in extents");
    for (std::uint8_t v : img.pixels()) x[o++] = static_cast<float>(v) / 255.0f;
  }
  return x;
}

namespace {

nn::Tensor run_logits(const ModelWeights& weights, std::span<const GrayImage> images, Mode mode,
                      std::uint64_t dropout_seed) {
  nn::Tape<float> tape;
  std::vector<nn::Var> params;
  params.reserve(weights.parameters.size());
  for (const NamedTensor& p : weights.parameters) params.push_back(tape.constant(p.value));
  std::vector<nn::Tensor> buffers;
  buffers.reserve(weights.buffers.size());
  for (const NamedTensor& b : weights.buffers) buffers.push_back(b.value);
  const nn::Var input = tape.constant(to_input(images));
  const nn::Var out = logits<float>(tape, weights.config, params, buffers, input, mode, dropout_seed);
  const nn::Tensor& result = tape.value(out);
  if (!result.all_finite()) throw ComputeError("unet: non-finite logits in forward pass");
  return result;
}

}  // namespace

std::vector<ProbabilityMap> forward_batch(const ModelWeights& weights, std::span<const GrayImage> images, Mode mode,
                                          std::uint64_t dropout_seed) {
  const nn::Tensor prob = nn::vessel_probability(run_logits(weights, images, mode, dropout_seed));
  const int rows = images[0].rows();
  const int cols = images[0].cols();
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  std::vector<ProbabilityMap> maps;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<float> v(prob.data() + i * plane, prob.data() + (i + 1) * plane);
    maps.emplace_back(rows, cols, std::move(v));
  }
  return maps;
}

ProbabilityMap forward(const ModelWeights& weights, const GrayImage& image, Mode mode, std::uint64_t dropout_seed) {
  return forward_batch(weights, std::span<const GrayImage>(&image, 1), mode, dropout_seed).front();
}

nn::Tensor class_probabilities(const ModelWeights& weights, const GrayImage& image) {
  const nn::Tensor l = run_logits(weights, std::span<const GrayImage>(&image, 1), Mode::infer, 0);
  const std::size_t plane = static_cast<std::size_t>(image.rows()) * image.cols();
  nn::Tensor p({2, image.rows(), image.cols()});
  for (std::size_t j = 0; j < plane; ++j) {
    const double a = l[j];
    const double b = l[plane + j];
    const double top = std::max(a, b);
    const double ea = std::exp(a - top);
    const double eb = std::exp(b - top);
    p[j] = static_cast<float>(ea / (ea + eb));
    p[plane + j] = static_cast<float>(eb / (ea + eb));
  }
  return p;
}

std::vector<char> encode_weights(const ModelWeights& weights) {
  Writer w;
  w.bytes(kWeightMagic, 4);
  w.u16(kWeightVersion);
  const UnetConfig& c = weights.config;
  w.u32(static_cast<std::uint32_t>(c.depth));
  w.u32(static_cast<std::uint32_t>(c.base_channels));
  w.u32(static_cast<std::uint32_t>(c.in_channels));
  w.u32(static_cast<std::uint32_t>(c.out_classes));
  w.u32(static_cast<std::uint32_t>(c.kernel_size));
  w.f32(c.dropout_p);
  w.u32(static_cast<std::uint32_t>(weights.parameters.size() + weights.buffers.size()));
  auto layer = [&](const NamedTensor& t) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (int e : t.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : t.value.values()) w.f32(v);
  };
  for (const NamedTensor& t : weights.parameters) layer(t);
  for (const NamedTensor& t : weights.buffers) layer(t);
  return w.take();
}

ModelWeights decode_weights(std::span<const char> bytes) {
  StoredFile f = parse(bytes);
  const UnetConfig config = f.config;
  return assemble(std::move(f), config);
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_weights(weights));
}

ModelWeights load_weights(const std::filesystem::path& path) { return decode_weights(io::read_file(path)); }

ModelWeights load_weights(const std::filesystem::path& path, const UnetConfig& expected) {
  expected.validate();
  StoredFile f = parse(io::read_file(path));
  const UnetConfig stored = f.config;
  ModelWeights w = assemble(std::move(f), expected);
  if (stored.dropout_p != expected.dropout_p) {
    throw ConfigError("weights were saved with dropout_p " + std::to_string(stored.dropout_p) + ", expected " +
                      std::to_string(expected.dropout_p));
  }
  return w;
}

}  // namespace octaquant::unet
