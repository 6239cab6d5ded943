#include "octaquant/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "octaquant/random.hpp"

namespace octaquant::nn {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct Dims {
  int n = 1, c = 1, h = 1, w = 1;
  bool batched = true;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t image() const { return static_cast<std::size_t>(c) * plane(); }
};

Dims spatial_dims(const Shape& shape, const char* op) {
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3], true};
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2], false};
  throw ShapeError(std::string(op) + ": expected [N,C,H,W] or [C,H,W], got " + to_string(shape));
}

Shape make_shape(const Dims& d, int c, int h, int w) {
  if (d.batched) return {d.n, c, h, w};
  return {c, h, w};
}

struct ConvGeometry {
  Dims in;
  int out_channels = 0;
  int kernel = 0;
  int padding = 0;
  int out_h = 0;
  int out_w = 0;
  std::size_t col_rows() const { return static_cast<std::size_t>(in.c) * kernel * kernel; }
  std::size_t col_cols() const { return static_cast<std::size_t>(out_h) * out_w; }
  bool direct() const { return kernel == 1 && padding == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>* bias,
                           int padding) {
  ConvGeometry g;
  g.in = spatial_dims(input.shape(), "conv2d");
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be [C_out,C_in,k,k], got " + to_string(kernels.shape()));
  if (kernels.dim(1) != g.in.c) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " has " + std::to_string(g.in.c) +
                     " channels but kernels " + to_string(kernels.shape()) + " expect " +
                     std::to_string(kernels.dim(1)));
  }
  if (kernels.dim(2) != kernels.dim(3) || kernels.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd extent, got " + to_string(kernels.shape()));
  }
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  g.out_channels = kernels.dim(0);
  g.kernel = kernels.dim(2);
  g.padding = padding;
  g.out_h = g.in.h + 2 * padding - g.kernel + 1;
  g.out_w = g.in.w + 2 * padding - g.kernel + 1;
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " too small for kernel " +
                     to_string(kernels.shape()) + " with padding " + std::to_string(padding));
  }
  if (bias && !bias->empty() && (bias->rank() != 1 || bias->dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " does not match kernels " +
                     to_string(kernels.shape()));
  }
  return g;
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const int k = g.kernel;
  const std::size_t cols = g.col_cols();
  for (int c = 0; c < g.in.c; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * g.in.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy + ky - g.padding;
          T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.in.h) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.in.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox + kx - g.padding;
            dst[ox] = (ix >= 0 && ix < g.in.w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const int k = g.kernel;
  const std::size_t cols = g.col_cols();
  for (int c = 0; c < g.in.c; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * g.in.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy + ky - g.padding;
          if (iy < 0 || iy >= g.in.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * g.in.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox + kx - g.padding;
            if (ix >= 0 && ix < g.in.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                            const ConvGeometry& g) {
  BasicTensor<T> out(make_shape(g.in, g.out_channels, g.out_h, g.out_w));
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const auto cols = static_cast<Eigen::Index>(g.col_cols());
  ConstMatrixMap<T> weights(kernels.data(), g.out_channels, rows);
  AlignedVector<T> col(g.direct() ? 0 : g.col_rows() * g.col_cols());
  for (int n = 0; n < g.in.n; ++n) {
    const T* image = input.data() + static_cast<std::size_t>(n) * g.in.image();
    const T* col_data = image;
    if (!g.direct()) {
      im2col(image, g, col.data());
      col_data = col.data();
    }
    MatrixMap<T> result(out.data() + static_cast<std::size_t>(n) * g.out_channels * g.col_cols(), g.out_channels,
                        cols);
    result.noalias() = weights * ConstMatrixMap<T>(col_data, rows, cols);
    if (!bias.empty()) {
      for (int o = 0; o < g.out_channels; ++o) result.row(o).array() += bias[static_cast<std::size_t>(o)];
    }
  }
  return out;
}

template <typename T>
void conv_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& out_grad,
                   const ConvGeometry& g, BasicTensor<T>* input_grad, BasicTensor<T>* kernel_grad,
                   BasicTensor<T>* bias_grad) {
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const auto cols = static_cast<Eigen::Index>(g.col_cols());
  ConstMatrixMap<T> weights(kernels.data(), g.out_channels, rows);
  AlignedVector<T> col(g.direct() ? 0 : g.col_rows() * g.col_cols());
  AlignedVector<T> col_grad(input_grad && !g.direct() ? g.col_rows() * g.col_cols() : 0);
  for (int n = 0; n < g.in.n; ++n) {
    ConstMatrixMap<T> dout(out_grad.data() + static_cast<std::size_t>(n) * g.out_channels * g.col_cols(),
                           g.out_channels, cols);
    if (bias_grad) {
      for (int o = 0; o < g.out_channels; ++o) (*bias_grad)[static_cast<std::size_t>(o)] += dout.row(o).sum();
    }
    const T* image = input.data() + static_cast<std::size_t>(n) * g.in.image();
    if (kernel_grad) {
      const T* col_data = image;
      if (!g.direct()) {
        im2col(image, g, col.data());
        col_data = col.data();
      }
      MatrixMap<T> dw(kernel_grad->data(), g.out_channels, rows);
      dw.noalias() += dout * ConstMatrixMap<T>(col_data, rows, cols).transpose();
    }
    if (input_grad) {
      T* dimage = input_grad->data() + static_cast<std::size_t>(n) * g.in.image();
      if (g.direct()) {
        MatrixMap<T>(dimage, rows, cols).noalias() += weights.transpose() * dout;
      } else {
        MatrixMap<T>(col_grad.data(), rows, cols).noalias() = weights.transpose() * dout;
        col2im_add(col_grad.data(), g, dimage);
      }
    }
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shapes differ " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

// ----------------------------------------------------------------- kernels

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                      int padding) {
  const ConvGeometry g = conv_geometry(input, kernels, &bias, padding);
  return conv_forward(input, kernels, bias, g);
}

template <typename T>
BasicTensor<T> relu6(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (T& v : y.values()) v = std::min(std::max(v, T{0}), T{6});
  return y;
}

template <typename T>
MaxPoolResult<T> maxpool2(const BasicTensor<T>& x) {
  const Dims d = spatial_dims(x.shape(), "maxpool2");
  if (d.h % 2 != 0 || d.w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents must be even, got " + to_string(x.shape()) +
                     "; pad or crop the input first");
  }
  const int oh = d.h / 2;
  const int ow = d.w / 2;
  MaxPoolResult<T> r{BasicTensor<T>(make_shape(d, d.c, oh, ow)), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (int plane = 0; plane < d.n * d.c; ++plane) {
    const std::size_t base = static_cast<std::size_t>(plane) * d.plane();
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * y) * d.w + 2 * xo;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + static_cast<std::size_t>(2 * y + dy) * d.w + 2 * xo + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        r.output[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x) {
  const Dims d = spatial_dims(x.shape(), "upsample_nearest2");
  BasicTensor<T> y(make_shape(d, d.c, 2 * d.h, 2 * d.w));
  const int ow = 2 * d.w;
  for (int plane = 0; plane < d.n * d.c; ++plane) {
    const T* src = x.data() + static_cast<std::size_t>(plane) * d.plane();
    T* dst = y.data() + static_cast<std::size_t>(plane) * d.plane() * 4;
    for (int r = 0; r < 2 * d.h; ++r) {
      for (int c = 0; c < ow; ++c) dst[static_cast<std::size_t>(r) * ow + c] = src[(r / 2) * d.w + c / 2];
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0,1), got " + std::to_string(p));
  BasicTensor<T> mask(shape, T{1});
  if (p == 0.0) return mask;
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (T& v : mask.values()) v = rng.uniform() < p ? T{0} : keep_scale;
  return mask;
}

template <typename T>
BasicTensor<T> vessel_probability(const BasicTensor<T>& logits) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ShapeError("vessel_probability: expected [N,2,H,W] logits, got " + to_string(logits.shape()));
  }
  const int n = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  BasicTensor<T> p({n, logits.dim(2), logits.dim(3)});
  for (int i = 0; i < n; ++i) {
    const T* l0 = logits.data() + static_cast<std::size_t>(i) * 2 * plane;
    const T* l1 = l0 + plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const T diff = l0[j] - l1[j];
      // 1/(1+e^diff) evaluated without overflow.
      p[i * plane + j] = diff > 0 ? std::exp(-diff) / (T{1} + std::exp(-diff)) : T{1} / (T{1} + std::exp(diff));
    }
  }
  return p;
}

// ------------------------------------------------------------- recorded ops

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernels, Var bias, int padding) {
  const BasicTensor<T> no_bias;
  const BasicTensor<T>& b = bias.valid() ? tape.value(bias) : no_bias;
  const ConvGeometry g = conv_geometry(tape.value(input), tape.value(kernels), &b, padding);
  BasicTensor<T> out = conv_forward(tape.value(input), tape.value(kernels), b, g);
  return tape.record(std::move(out), {input, kernels, bias},
                     [input, kernels, bias, g](Tape<T>& t, const BasicTensor<T>& dout) {
                       conv_backward(t.value(input), t.value(kernels), dout, g, t.grad_sink(input),
                                     t.grad_sink(kernels), t.grad_sink(bias));
                     });
}

template <typename T>
Var relu6(Tape<T>& tape, Var x) {
  return tape.record(relu6(tape.value(x)), {x}, [x](Tape<T>& t, const BasicTensor<T>& dout) {
    BasicTensor<T>* dx = t.grad_sink(x);
    const BasicTensor<T>& in = t.value(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > T{0} && in[i] < T{6}) (*dx)[i] += dout[i];
    }
  });
}

template <typename T>
Var maxpool2(Tape<T>& tape, Var x) {
  MaxPoolResult<T> r = maxpool2(tape.value(x));
  return tape.record(std::move(r.output), {x},
                     [x, argmax = std::move(r.argmax)](Tape<T>& t, const BasicTensor<T>& dout) {
                       BasicTensor<T>* dx = t.grad_sink(x);
                       for (std::size_t i = 0; i < argmax.size(); ++i) (*dx)[argmax[i]] += dout[i];
                     });
}

template <typename T>
Var upsample_nearest2(Tape<T>& tape, Var x) {
  return tape.record(upsample_nearest2(tape.value(x)), {x}, [x](Tape<T>& t, const BasicTensor<T>& dout) {
    BasicTensor<T>* dx = t.grad_sink(x);
    const Dims d = spatial_dims(t.value(x).shape(), "upsample_nearest2");
    const int ow = 2 * d.w;
    for (int plane = 0; plane < d.n * d.c; ++plane) {
      T* dst = dx->data() + static_cast<std::size_t>(plane) * d.plane();
      const T* src = dout.data() + static_cast<std::size_t>(plane) * d.plane() * 4;
      for (int r = 0; r < 2 * d.h; ++r) {
        for (int c = 0; c < ow; ++c) dst[(r / 2) * d.w + c / 2] += src[static_cast<std::size_t>(r) * ow + c];
      }
    }
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const BasicTensor<T>& va = tape.value(a);
  const BasicTensor<T>& vb = tape.value(b);
  if (va.rank() != 4 || vb.rank() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
      va.dim(3) != vb.dim(3)) {
    throw ShapeError("concat_channels: incompatible shapes " + to_string(va.shape()) + " and " +
                     to_string(vb.shape()));
  }
  const int n = va.dim(0);
  const std::size_t sa = va.size() / static_cast<std::size_t>(n);
  const std::size_t sb = vb.size() / static_cast<std::size_t>(n);
  BasicTensor<T> out({n, va.dim(1) + vb.dim(1), va.dim(2), va.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(va.data() + i * sa, sa, out.data() + i * (sa + sb));
    std::copy_n(vb.data() + i * sb, sb, out.data() + i * (sa + sb) + sa);
  }
  return tape.record(std::move(out), {a, b}, [a, b, n, sa, sb](Tape<T>& t, const BasicTensor<T>& dout) {
    BasicTensor<T>* da = t.grad_sink(a);
    BasicTensor<T>* db = t.grad_sink(b);
    for (int i = 0; i < n; ++i) {
      const T* src = dout.data() + i * (sa + sb);
      if (da) {
        for (std::size_t j = 0; j < sa; ++j) (*da)[i * sa + j] += src[j];
      }
      if (db) {
        for (std::size_t j = 0; j < sb; ++j) (*db)[i * sb + j] += src[sa + j];
      }
    }
  });
}

template <typename T>
Var batchnorm(Tape<T>& tape, Var x, Var gamma, Var beta, BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
              Mode mode, BatchNormOptions options) {
  const BasicTensor<T>& in = tape.value(x);
  if (in.rank() != 4) throw ShapeError("batchnorm: expected [N,C,H,W], got " + to_string(in.shape()));
  const int n = in.dim(0);
  const int channels = in.dim(1);
  const std::size_t plane = static_cast<std::size_t>(in.dim(2)) * in.dim(3);
  const Shape param_shape{channels};
  require_same_shape(tape.value(gamma).shape(), param_shape, "batchnorm gamma");
  require_same_shape(tape.value(beta).shape(), param_shape, "batchnorm beta");
  require_same_shape(running_mean.shape(), param_shape, "batchnorm running mean");
  require_same_shape(running_var.shape(), param_shape, "batchnorm running variance");
  const std::size_t count = static_cast<std::size_t>(n) * plane;
  if (mode == Mode::train && count < 2) {
    throw ShapeError("batchnorm: train mode needs at least 2 values per channel, got " + std::to_string(count));
  }

  const BasicTensor<T>& g = tape.value(gamma);
  const BasicTensor<T>& b = tape.value(beta);
  BasicTensor<T> xhat(in.shape());
  BasicTensor<T> out(in.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    T mean;
    T var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = in.data() + (static_cast<std::size_t>(i) * channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = in.data() + (static_cast<std::size_t>(i) * channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) ss += (p[j] - m) * (p[j] - m);
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(count));
      const double unbiased = ss / static_cast<double>(count - 1);
      running_mean[static_cast<std::size_t>(c)] =
          static_cast<T>(options.momentum * running_mean[static_cast<std::size_t>(c)] + (1.0 - options.momentum) * m);
      running_var[static_cast<std::size_t>(c)] = static_cast<T>(
          options.momentum * running_var[static_cast<std::size_t>(c)] + (1.0 - options.momentum) * unbiased);
    } else {
      mean = running_mean[static_cast<std::size_t>(c)];
      var = running_var[static_cast<std::size_t>(c)];
    }
    const T istd = T{1} / std::sqrt(var + static_cast<T>(options.epsilon));
    inv_std[static_cast<std::size_t>(c)] = istd;
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(i) * channels + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const T h = (in[base + j] - mean) * istd;
        xhat[base + j] = h;
        out[base + j] = g[static_cast<std::size_t>(c)] * h + b[static_cast<std::size_t>(c)];
      }
    }
  }

  return tape.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mode, n, channels, plane, count, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const BasicTensor<T>& dout) {
        BasicTensor<T>* dx = t.grad_sink(x);
        BasicTensor<T>* dgamma = t.grad_sink(gamma);
        BasicTensor<T>* dbeta = t.grad_sink(beta);
        const BasicTensor<T>& g = t.value(gamma);
        for (int c = 0; c < channels; ++c) {
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (int i = 0; i < n; ++i) {
            const std::size_t base = (static_cast<std::size_t>(i) * channels + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              sum_dy += dout[base + j];
              sum_dy_xhat += static_cast<double>(dout[base + j]) * xhat[base + j];
            }
          }
          if (dgamma) (*dgamma)[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
          if (dbeta) (*dbeta)[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const T scale = g[static_cast<std::size_t>(c)] * inv_std[static_cast<std::size_t>(c)];
          const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
          const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(count));
          for (int i = 0; i < n; ++i) {
            const std::size_t base = (static_cast<std::size_t>(i) * channels + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              if (mode == Mode::train) {
                (*dx)[base + j] += scale * (dout[base + j] - mean_dy - xhat[base + j] * mean_dy_xhat);
              } else {
                (*dx)[base + j] += scale * dout[base + j];
              }
            }
          }
        }
      });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, std::uint64_t seed, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0,1), got " + std::to_string(p));
  if (mode == Mode::infer || p == 0.0) return x;
  BasicTensor<T> mask = dropout_mask<T>(tape.value(x).shape(), p, seed);
  BasicTensor<T> out = tape.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape.record(std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& t, const BasicTensor<T>& dout) {
    BasicTensor<T>* dx = t.grad_sink(x);
    for (std::size_t i = 0; i < mask.size(); ++i) (*dx)[i] += dout[i] * mask[i];
  });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::uint8_t> targets) {
  const BasicTensor<T>& l = tape.value(logits);
  if (l.rank() != 4 || l.dim(1) != 2) {
    throw ShapeError("softmax_cross_entropy: expected [N,2,H,W] logits, got " + to_string(l.shape()));
  }
  const int n = l.dim(0);
  const std::size_t plane = static_cast<std::size_t>(l.dim(2)) * l.dim(3);
  const std::size_t pixels = static_cast<std::size_t>(n) * plane;
  if (targets.size() != pixels) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(pixels) + " pixels");
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* l0 = l.data() + static_cast<std::size_t>(i) * 2 * plane;
    const T* l1 = l0 + plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const double a = l0[j];
      const double b = l1[j];
      const double top = std::max(a, b);
      const double lse = top + std::log(std::exp(a - top) + std::exp(b - top));
      total += lse - (targets[i * plane + j] ? b : a);
    }
  }
  BasicTensor<T> loss({1}, static_cast<T>(total / static_cast<double>(pixels)));
  std::vector<std::uint8_t> saved(targets.begin(), targets.end());
  return tape.record(std::move(loss), {logits},
                     [logits, n, plane, pixels, saved = std::move(saved)](Tape<T>& t, const BasicTensor<T>& dout) {
                       BasicTensor<T>* dl = t.grad_sink(logits);
                       const BasicTensor<T> prob1 = vessel_probability(t.value(logits));
                       const T scale = dout[0] / static_cast<T>(pixels);
                       for (int i = 0; i < n; ++i) {
                         T* d0 = dl->data() + static_cast<std::size_t>(i) * 2 * plane;
                         T* d1 = d0 + plane;
                         for (std::size_t j = 0; j < plane; ++j) {
                           const T p1 = prob1[i * plane + j];
                           const T y1 = saved[i * plane + j] ? T{1} : T{0};
                           d1[j] += scale * (p1 - y1);
                           d0[j] += scale * ((T{1} - p1) - (T{1} - y1));
                         }
                       }
                     });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  double s = 0.0;
  for (T v : tape.value(x).values()) s += v;
  return tape.record(BasicTensor<T>({1}, static_cast<T>(s)), {x}, [x](Tape<T>& t, const BasicTensor<T>& dout) {
    for (T& v : t.grad_sink(x)->values()) v += dout[0];
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a).shape(), tape.value(b).shape(), "mul");
  BasicTensor<T> out = tape.value(a);
  const BasicTensor<T>& vb = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const BasicTensor<T>& dout) {
    const BasicTensor<T>& va = t.value(a);
    const BasicTensor<T>& vb = t.value(b);
    if (BasicTensor<T>* da = t.grad_sink(a)) {
      for (std::size_t i = 0; i < va.size(); ++i) (*da)[i] += dout[i] * vb[i];
    }
    if (BasicTensor<T>* db = t.grad_sink(b)) {
      for (std::size_t i = 0; i < va.size(); ++i) (*db)[i] += dout[i] * va[i];
    }
  });
}

#define OCTAQUANT_INSTANTIATE_LAYERS(T)                                                                            \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int);       \
  template BasicTensor<T> relu6(const BasicTensor<T>&);                                                           \
  template MaxPoolResult<T> maxpool2(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> upsample_nearest2(const BasicTensor<T>&);                                               \
  template BasicTensor<T> dropout_mask<T>(const Shape&, double, std::uint64_t);                                   \
  template BasicTensor<T> vessel_probability(const BasicTensor<T>&);                                              \
  template Var conv2d(Tape<T>&, Var, Var, Var, int);                                                              \
  template Var relu6(Tape<T>&, Var);                                                                              \
  template Var maxpool2(Tape<T>&, Var);                                                                           \
  template Var upsample_nearest2(Tape<T>&, Var);                                                                  \
  template Var concat_channels(Tape<T>&, Var, Var);                                                               \
  template Var batchnorm(Tape<T>&, Var, Var, Var, BasicTensor<T>&, BasicTensor<T>&, Mode, BatchNormOptions);      \
  template Var dropout(Tape<T>&, Var, double, std::uint64_t, Mode);                                               \
  template Var softmax_cross_entropy(Tape<T>&, Var, std::span<const std::uint8_t>);                               \
  template Var sum(Tape<T>&, Var);                                                                                \
  template Var mul(Tape<T>&, Var, Var);

OCTAQUANT_INSTANTIATE_LAYERS(float)
OCTAQUANT_INSTANTIATE_LAYERS(double)

#undef OCTAQUANT_INSTANTIATE_LAYERS

}  // namespace octaquant::nn
