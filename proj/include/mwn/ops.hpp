#pragma once

// Forward and backward kernels for the layers used by the encoder and the toy
// detector. Every function is pure: outputs depend only on arguments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mwn/tensor.hpp"

namespace mwn {

/// Convolution weights: kernels are C_out x C_in x K x K, bias is C_out.
struct ConvParams {
  Tensor kernels;
  Tensor bias;
  bool bias_enabled = true;

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t kernel_size() const { return kernels.dim(2); }

  void validate() const {
    kernels.require_rank(4, "ConvParams.kernels");
    if (kernels.dim(2) != kernels.dim(3)) {
      throw ShapeError("ConvParams: kernels must be square, got " + shape_string(kernels.shape()));
    }
    bias.require_rank(1, "ConvParams.bias");
    if (bias.dim(0) != kernels.dim(0)) {
      throw ShapeError("ConvParams: bias length " + std::to_string(bias.dim(0)) +
                       " does not match " + std::to_string(kernels.dim(0)) + " kernels");
    }
  }
};

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_kernels;
  Tensor grad_bias;
};

namespace detail {

inline void check_conv_args(const Tensor& input, const ConvParams& params, std::size_t pad) {
  params.validate();
  input.require_rank(3, "conv2d input");
  if (input.dim(0) != params.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) +
                     " channels but kernels expect " + std::to_string(params.in_channels()));
  }
  const std::size_t k = params.kernel_size();
  if (input.dim(1) + 2 * pad < k || input.dim(2) + 2 * pad < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     shape_string(input.shape()));
  }
}

// Output rows/cols [lo, hi) whose tap at offset `tap` lands inside the input.
inline void valid_range(std::size_t out_extent, std::size_t in_extent, std::size_t tap,
                        std::size_t pad, std::size_t& lo, std::size_t& hi) {
  // input index = out + tap - pad must lie in [0, in_extent)
  lo = tap < pad ? pad - tap : 0;
  const std::ptrdiff_t upper = static_cast<std::ptrdiff_t>(in_extent) +
                               static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(tap);
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(upper, 0, static_cast<std::ptrdiff_t>(out_extent)));
  if (hi < lo) hi = lo;
}

}  // namespace detail

/// Stride-1 cross-correlation with symmetric zero padding.
inline Tensor conv2d_forward(const Tensor& input, const ConvParams& params, std::size_t pad) {
  detail::check_conv_args(input, params, pad);
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = params.out_channels(), k = params.kernel_size();
  const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;

  Tensor out({cout, ho, wo});
  const double* in = input.data().data();
  const double* ker = params.kernels.data().data();
  double* dst = out.data().data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* plane = dst + o * ho * wo;
    if (params.bias_enabled) {
      const double b = params.bias[o];
      for (std::size_t i = 0; i < ho * wo; ++i) plane[i] = b;
    }
    for (std::size_t c = 0; c < cin; ++c) {
      const double* src = in + c * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        std::size_t y0, y1;
        detail::valid_range(ho, h, ky, pad, y0, y1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          std::size_t x0, x1;
          detail::valid_range(wo, w, kx, pad, x0, x1);
          const double wt = ker[((o * cin + c) * k + ky) * k + kx];
          for (std::size_t y = y0; y < y1; ++y) {
            const double* row = src + (y + ky - pad) * w;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
            double* orow = plane + y * wo;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += wt * row[static_cast<std::ptrdiff_t>(x) + shift];
          }
        }
      }
    }
  }
  return out;
}

inline ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params, std::size_t pad,
                                 const Tensor& grad_out) {
  detail::check_conv_args(input, params, pad);
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = params.out_channels(), k = params.kernel_size();
  const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  if (grad_out.shape() != Shape{cout, ho, wo}) {
    throw ShapeError("conv2d_backward: grad_out shape " + shape_string(grad_out.shape()) +
                     " does not match forward output " + shape_string({cout, ho, wo}));
  }

  ConvGrads g{Tensor::zeros_like(input), Tensor::zeros_like(params.kernels),
              Tensor::zeros_like(params.bias)};
  const double* in = input.data().data();
  const double* ker = params.kernels.data().data();
  const double* go = grad_out.data().data();
  double* gin = g.grad_input.data().data();
  double* gker = g.grad_kernels.data().data();
  for (std::size_t o = 0; o < cout; ++o) {
    const double* gplane = go + o * ho * wo;
    if (params.bias_enabled) {
      double s = 0.0;
      for (std::size_t i = 0; i < ho * wo; ++i) s += gplane[i];
      g.grad_bias[o] = s;
    }
    for (std::size_t c = 0; c < cin; ++c) {
      const double* src = in + c * h * w;
      double* gsrc = gin + c * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        std::size_t y0, y1;
        detail::valid_range(ho, h, ky, pad, y0, y1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          std::size_t x0, x1;
          detail::valid_range(wo, w, kx, pad, x0, x1);
          const std::size_t widx = ((o * cin + c) * k + ky) * k + kx;
          const double wt = ker[widx];
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const std::size_t off = (y + ky - pad) * w;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
            const double* row = src + off;
            double* grow = gsrc + off;
            const double* grow_out = gplane + y * wo;
            for (std::size_t x = x0; x < x1; ++x) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x) + shift;
              acc += row[ix] * grow_out[x];
              grow[ix] += wt * grow_out[x];
            }
          }
          gker[widx] += acc;
        }
      }
    }
  }
  return g;
}

/// Fully connected layer: y = weight * x + bias.
inline Tensor fc_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  x.require_rank(1, "fc input");
  weight.require_rank(2, "fc weight");
  bias.require_rank(1, "fc bias");
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  if (x.dim(0) != din || bias.dim(0) != dout) {
    throw ShapeError("fc: weight " + shape_string(weight.shape()) + " incompatible with input " +
                     shape_string(x.shape()) + " / bias " + shape_string(bias.shape()));
  }
  Tensor y({dout});
  for (std::size_t o = 0; o < dout; ++o) {
    double s = bias[o];
    const double* row = weight.data().data() + o * din;
    for (std::size_t i = 0; i < din; ++i) s += row[i] * x[i];
    y[o] = s;
  }
  return y;
}

struct FcGrads {
  Tensor grad_x;
  Tensor grad_weight;
  Tensor grad_bias;
};

inline FcGrads fc_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  x.require_rank(1, "fc input");
  weight.require_rank(2, "fc weight");
  grad_out.require_rank(1, "fc grad_out");
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  if (x.dim(0) != din || grad_out.dim(0) != dout) {
    throw ShapeError("fc_backward: weight " + shape_string(weight.shape()) +
                     " incompatible with input " + shape_string(x.shape()) + " / grad " +
                     shape_string(grad_out.shape()));
  }
  FcGrads g{Tensor({din}), Tensor({dout, din}), grad_out};
  for (std::size_t o = 0; o < dout; ++o) {
    const double go = grad_out[o];
    const double* row = weight.data().data() + o * din;
    double* grow = g.grad_weight.data().data() + o * din;
    for (std::size_t i = 0; i < din; ++i) {
      grow[i] = go * x[i];
      g.grad_x[i] += go * row[i];
    }
  }
  return g;
}

/// Number of multiply-accumulate connections in an FC layer.
constexpr std::uint64_t fc_connections(std::uint64_t d_in, std::uint64_t d_out) {
  return d_in * d_out;
}

inline Tensor relu_forward(Tensor x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
  return x;
}

/// Subgradient at zero is zero.
inline Tensor relu_backward(const Tensor& x, Tensor grad_out) {
  x.require_same_shape(grad_out, "relu_backward");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) grad_out[i] = 0.0;
  }
  return grad_out;
}

struct MaxPoolResult {
  Tensor values;
  std::vector<std::size_t> argmax;  // linear index within each H x W plane
};

/// Per-channel maximum; ties resolve to the smallest linear index.
inline MaxPoolResult global_max_pool(const Tensor& x) {
  x.require_rank(3, "global_max_pool");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  MaxPoolResult r{Tensor({c}), std::vector<std::size_t>(c, 0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = x.data().data() + ch * plane;
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i) {
      if (p[i] > p[best]) best = i;
    }
    r.values[ch] = p[best];
    r.argmax[ch] = best;
  }
  return r;
}

inline Tensor global_max_pool_backward(const Shape& input_shape,
                                       const std::vector<std::size_t>& argmax,
                                       const Tensor& grad_out) {
  if (input_shape.size() != 3 || grad_out.size() != input_shape[0] ||
      argmax.size() != input_shape[0]) {
    throw ShapeError("global_max_pool_backward: inconsistent shapes");
  }
  Tensor g(input_shape);
  const std::size_t plane = input_shape[1] * input_shape[2];
  for (std::size_t ch = 0; ch < input_shape[0]; ++ch) g[ch * plane + argmax[ch]] = grad_out[ch];
  return g;
}

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

inline LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  logits.require_rank(1, "softmax_cross_entropy");
  if (label >= logits.size()) {
    throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(label) +
                          " out of range for " + std::to_string(logits.size()) + " classes");
  }
  const double m = logits.max();
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - m);
  const double log_z = std::log(z) + m;
  LossResult r{log_z - logits[label], Tensor::zeros_like(logits)};
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - log_z);
  r.grad[label] -= 1.0;
  return r;
}

inline Tensor softmax(const Tensor& logits) {
  const double m = logits.max();
  Tensor p = logits;
  double z = 0.0;
  for (double& v : p.data()) z += (v = std::exp(v - m));
  return (1.0 / z) * std::move(p);
}

inline LossResult smooth_l1(const Tensor& pred, const Tensor& target) {
  pred.require_same_shape(target, "smooth_l1");
  LossResult r{0.0, Tensor::zeros_like(pred)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    if (std::abs(d) < 1.0) {
      r.loss += 0.5 * d * d;
      r.grad[i] = d;
    } else {
      r.loss += std::abs(d) - 0.5;
      r.grad[i] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  return r;
}

struct SgdOptions {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
inline void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity,
                              const SgdOptions& opt) {
  param.require_same_shape(grad, "sgd_momentum_step");
  param.require_same_shape(velocity, "sgd_momentum_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = opt.momentum * velocity[i] + (grad[i] + opt.weight_decay * param[i]);
    param[i] -= opt.lr * velocity[i];
  }
}

/// Non-overlapping 2x2 average pooling (floor on odd extents).
inline Tensor avg_pool2_forward(const Tensor& x) {
  x.require_rank(3, "avg_pool2");
  const std::size_t c = x.dim(0), ho = x.dim(1) / 2, wo = x.dim(2) / 2;
  if (ho == 0 || wo == 0) throw ShapeError("avg_pool2: input too small " + shape_string(x.shape()));
  Tensor y({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        y.at(ch, i, j) = 0.25 * (x.at(ch, 2 * i, 2 * j) + x.at(ch, 2 * i, 2 * j + 1) +
                                 x.at(ch, 2 * i + 1, 2 * j) + x.at(ch, 2 * i + 1, 2 * j + 1));
  return y;
}

inline Tensor avg_pool2_backward(const Shape& input_shape, const Tensor& grad_out) {
  Tensor g(input_shape);
  const std::size_t c = input_shape[0], ho = input_shape[1] / 2, wo = input_shape[2] / 2;
  if (grad_out.shape() != Shape{c, ho, wo}) throw ShapeError("avg_pool2_backward: shape mismatch");
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const double v = 0.25 * grad_out.at(ch, i, j);
        g.at(ch, 2 * i, 2 * j) = v;
        g.at(ch, 2 * i, 2 * j + 1) = v;
        g.at(ch, 2 * i + 1, 2 * j) = v;
        g.at(ch, 2 * i + 1, 2 * j + 1) = v;
      }
  return g;
}

}  // namespace mwn
