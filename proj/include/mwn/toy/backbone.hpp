#pragma once

// Three-layer convolutional backbone with total stride 4:
//   conv3x3 -> relu -> avgpool2 -> conv3x3 -> relu -> avgpool2 -> convKxK -> relu
// with K = 1 by default, giving a 10 px receptive field (18 px for K = 3).

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mwn/ops.hpp"
#include "mwn/random.hpp"
#include "mwn/tensor.hpp"

namespace mwn::toy {

inline constexpr std::size_t kBackboneStride = 4;

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t channels1 = 8;
  std::size_t channels2 = 16;
  std::size_t out_channels = 32;
  std::size_t conv3_kernel = 1;  // keeps the receptive field at 10 px
};

struct BackboneParams {
  ConvParams conv1;
  ConvParams conv2;
  ConvParams conv3;

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    return {{"backbone.conv1.kernels", &conv1.kernels}, {"backbone.conv1.bias", &conv1.bias},
            {"backbone.conv2.kernels", &conv2.kernels}, {"backbone.conv2.bias", &conv2.bias},
            {"backbone.conv3.kernels", &conv3.kernels}, {"backbone.conv3.bias", &conv3.bias}};
  }
};

inline BackboneParams init_backbone_params(const BackboneConfig& cfg, Rng& rng) {
  auto layer = [&rng](std::size_t cin, std::size_t cout, std::size_t k) {
    const double he = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    return ConvParams{rng.normal_tensor({cout, cin, k, k}, he), Tensor({cout}), true};
  };
  BackboneParams p;
  p.conv1 = layer(cfg.in_channels, cfg.channels1, 3);
  p.conv2 = layer(cfg.channels1, cfg.channels2, 3);
  p.conv3 = layer(cfg.channels2, cfg.out_channels, cfg.conv3_kernel);
  return p;
}

struct BackboneTrace {
  Tensor input;
  Tensor a1, p1, a2, p2, a3;  // pre-activations and pooled activations
  Tensor output;
};

inline BackboneTrace backbone_forward(const Tensor& image, const BackboneParams& p) {
  BackboneTrace t;
  t.input = image;
  t.a1 = conv2d_forward(image, p.conv1, 1);
  t.p1 = avg_pool2_forward(relu_forward(t.a1));
  t.a2 = conv2d_forward(t.p1, p.conv2, 1);
  t.p2 = avg_pool2_forward(relu_forward(t.a2));
  t.a3 = conv2d_forward(t.p2, p.conv3, p.conv3.kernel_size() / 2);
  t.output = relu_forward(t.a3);
  return t;
}

inline Tensor tiny_backbone(const Tensor& image, const BackboneParams& p) {
  return backbone_forward(image, p).output;
}

/// Accumulates parameter gradients into `grads`; returns d/dimage.
inline Tensor backbone_backward(const BackboneTrace& t, const BackboneParams& p, const Tensor& grad_output,
                                BackboneParams& grads) {
  auto accumulate = [](ConvParams& dst, const ConvGrads& g) {
    dst.kernels += g.grad_kernels;
    dst.bias += g.grad_bias;
  };
  Tensor g = relu_backward(t.a3, grad_output);
  auto g3 = conv2d_backward(t.p2, p.conv3, p.conv3.kernel_size() / 2, g);
  accumulate(grads.conv3, g3);
  g = relu_backward(t.a2, avg_pool2_backward(t.a2.shape(), g3.grad_input));
  auto g2 = conv2d_backward(t.p1, p.conv2, 1, g);
  accumulate(grads.conv2, g2);
  g = relu_backward(t.a1, avg_pool2_backward(t.a1.shape(), g2.grad_input));
  auto g1 = conv2d_backward(t.input, p.conv1, 1, g);
  accumulate(grads.conv1, g1);
  return std::move(g1.grad_input);
}

}  // namespace mwn::toy
