#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "octaquant/nn/tape.hpp"
#include "octaquant/nn/tensor.hpp"

namespace octaquant::nn {

// ---------------------------------------------------------------------------
// Stateless kernels. Spatial tensors are [N,C,H,W]; the rank-3 [C,H,W] form
// is accepted wherever a single image makes sense and returned in kind.
// ---------------------------------------------------------------------------

/// Stride-1 cross-correlation (no kernel flip) with zero padding.
/// `bias` may be empty.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                      int padding);

template <typename T>
BasicTensor<T> relu6(const BasicTensor<T>& x);

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  /// Flat index into the input of each output element's maximum.
  std::vector<std::size_t> argmax;
};

/// 2x2 non-overlapping max pooling; odd extents are rejected.
template <typename T>
MaxPoolResult<T> maxpool2(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x);

/// Inverted dropout mask: 0 for dropped elements, 1/(1-p) for survivors.
template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double p, std::uint64_t seed);

/// Per-pixel probability of class 1 from [N,2,H,W] logits, as [N,H,W].
template <typename T>
BasicTensor<T> vessel_probability(const BasicTensor<T>& logits);

// ---------------------------------------------------------------------------
// Recorded ops.
// ---------------------------------------------------------------------------

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernels, Var bias, int padding);

template <typename T>
Var relu6(Tape<T>& tape, Var x);

template <typename T>
Var maxpool2(Tape<T>& tape, Var x);

template <typename T>
Var upsample_nearest2(Tape<T>& tape, Var x);

/// Concatenation along the channel axis of two [N,C,H,W] tensors.
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

struct BatchNormOptions {
  double momentum = 0.9;  ///< weight of the previous running statistic
  double epsilon = 1e-5;  ///< variance floor
};

/// Per-channel batch normalization of [N,C,H,W]. Train mode normalizes with
/// batch statistics and folds them into the running buffers; infer mode
/// reads the running buffers only.
template <typename T>
Var batchnorm(Tape<T>& tape, Var x, Var gamma, Var beta, BasicTensor<T>& running_mean,
              BasicTensor<T>& running_var, Mode mode, BatchNormOptions options = {});

template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, std::uint64_t seed, Mode mode);

/// Mean over pixels of the two-class softmax negative log-likelihood.
/// `logits` is [N,2,H,W]; `targets` holds N*H*W class ids in {0,1}.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::uint8_t> targets);

template <typename T>
Var sum(Tape<T>& tape, Var x);

/// Elementwise product of equally shaped tensors.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

}  // namespace octaquant::nn
