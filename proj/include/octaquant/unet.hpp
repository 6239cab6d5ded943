#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "octaquant/nn/tape.hpp"
#include "octaquant/nn/tensor.hpp"
#include "octaquant/raster.hpp"

namespace octaquant::unet {

using nn::Mode;
using nn::NamedTensor;

/// Two-class U-Net topology. Level i of the contracting path carries
/// base_channels * 2^i channels.
struct UnetConfig {
  int depth = 4;
  int base_channels = 16;
  int in_channels = 1;
  int out_classes = 2;
  float dropout_p = 0.5f;
  int kernel_size = 3;

  void validate() const;
  /// Input extents must be multiples of this.
  int divisor() const { return 1 << (depth - 1); }
  friend bool operator==(const UnetConfig&, const UnetConfig&) = default;
};

/// Trainable parameters plus batch-norm running statistics ("buffers"), in
/// the fixed order produced by build().
struct ModelWeights {
  UnetConfig config;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> buffers;

  std::size_t parameter_count() const;
  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Fresh network with He fan-in normal initialization under `seed`.
ModelWeights build(const UnetConfig& config, std::uint64_t seed);

/// Throws ShapeError unless rows/cols are positive multiples of the
/// config divisor.
void check_extents(const UnetConfig& config, int rows, int cols);

/// Records the network on `tape` and returns the [N,2,H,W] logits.
/// `params` are tape handles in ModelWeights::parameters order; `buffers`
/// (running statistics) are updated in place in train mode. Dropout layer
/// i draws its mask from mix_seed(dropout_seed, i).
template <typename T>
nn::Var logits(nn::Tape<T>& tape, const UnetConfig& config, std::span<const nn::Var> params,
               std::span<nn::BasicTensor<T>> buffers, nn::Var input, Mode mode, std::uint64_t dropout_seed);

/// Scales 8-bit pixels to [0,1] and stacks them as [N,1,H,W].
nn::Tensor to_input(std::span<const GrayImage> images);

/// Per-pixel vessel probability for one image. Infer mode disables dropout
/// and uses running batch-norm statistics; train mode uses batch
/// statistics without touching `weights`.
ProbabilityMap forward(const ModelWeights& weights, const GrayImage& image, Mode mode = Mode::infer,
                       std::uint64_t dropout_seed = 0);

/// Batched infer/train forward; all images must share extents.
std::vector<ProbabilityMap> forward_batch(const ModelWeights& weights, std::span<const GrayImage> images,
                                          Mode mode = Mode::infer, std::uint64_t dropout_seed = 0);

/// Both class planes of the softmax for one image, [2,H,W]; used to check
/// the per-pixel normalization.
nn::Tensor class_probabilities(const ModelWeights& weights, const GrayImage& image);

inline constexpr char kWeightMagic[4] = {'O', 'C', 'T', 'W'};
inline constexpr std::uint16_t kWeightVersion = 1;

/// Binary weight file: magic "OCTW", u16 version, config block, u32 layer
/// count, then per layer (u32 name length, name, u32 rank, u32 extents,
/// little-endian float32 values). Parameters precede buffers.
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);

/// Loads and validates against the topology implied by the stored config.
ModelWeights load_weights(const std::filesystem::path& path);

/// As above, additionally requiring the file to match `expected`; the error
/// names the first mismatched layer.
ModelWeights load_weights(const std::filesystem::path& path, const UnetConfig& expected);

std::vector<char> encode_weights(const ModelWeights& weights);
ModelWeights decode_weights(std::span<const char> bytes);

}  // namespace octaquant::unet
