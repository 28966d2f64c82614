#pragma once

// Mask Weight Networks and the mask-based ROI feature encoders.
//
// One encoder evaluation for an ROI:
//   pooled  = average pooling of the ROI (local branch) or of the whole image
//             (global branch) to N' x N'
//   masks   = one N' x N' mask per channel, produced by a single N' x N'
//             convolution over a raw mask (MWN)
//   masked  = pooled * masks, channel by channel
//   v       = global max pooling of masked, one value per channel
//   feature = relu(fc(v)), with v the concatenation of both branches for lg
// and two linear heads map the feature to class scores and box deltas.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mwn/ops.hpp"
#include "mwn/random.hpp"
#include "mwn/roi.hpp"
#include "mwn/tensor.hpp"

namespace mwn {

enum class Variant { kLocal, kGlobal, kLocalGlobal, kBaselineLocal, kBaselineGlobal };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kLocal: return "m-frcn-l";
    case Variant::kGlobal: return "m-frcn-g";
    case Variant::kLocalGlobal: return "m-frcn-lg";
    case Variant::kBaselineLocal: return "baseline-local";
    case Variant::kBaselineGlobal: return "baseline-global";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "m-frcn-l" || s == "l") return Variant::kLocal;
  if (s == "m-frcn-g" || s == "g") return Variant::kGlobal;
  if (s == "m-frcn-lg" || s == "lg") return Variant::kLocalGlobal;
  if (s == "baseline-local") return Variant::kBaselineLocal;
  if (s == "baseline-global") return Variant::kBaselineGlobal;
  throw InvalidArgument("unknown variant '" + std::string(s) +
                        "' (expected baseline-local, baseline-global, m-frcn-l, m-frcn-g, m-frcn-lg)");
}

// Branch wiring per variant. The baselines keep the architecture of the
// variant they bypass: baseline-local is m-frcn-l with the unary raw mask
// applied directly, baseline-global is m-frcn-lg whose global branch max-pools
// the full-image map without masking.
constexpr bool has_local_branch(Variant v) { return v != Variant::kGlobal; }
constexpr bool has_global_branch(Variant v) {
  return v == Variant::kGlobal || v == Variant::kLocalGlobal || v == Variant::kBaselineGlobal;
}
constexpr bool has_mwn_l(Variant v) {
  return v == Variant::kLocal || v == Variant::kLocalGlobal || v == Variant::kBaselineGlobal;
}
constexpr bool has_mwn_g(Variant v) { return v == Variant::kGlobal || v == Variant::kLocalGlobal; }

struct EncoderConfig {
  Variant variant = Variant::kLocal;
  std::size_t n_prime = 7;
  std::size_t d_conv = 32;
  std::size_t d_fc = 64;
  double i_l = 1.0;
  double i_in_g = 1.0;
  double i_out_g = -1.0;
  bool bias_enabled = true;
  std::size_t num_classes = 3;  // foreground classes; the classifier adds background

  std::size_t fc_input_dim() const {
    return d_conv * ((has_local_branch(variant) ? 1 : 0) + (has_global_branch(variant) ? 1 : 0));
  }

  void validate() const {
    if (n_prime == 0 || n_prime % 2 == 0) {
      throw InvalidArgument("EncoderConfig: n_prime must be odd and >= 1, got " + std::to_string(n_prime));
    }
    if (d_conv == 0 || d_fc == 0) throw InvalidArgument("EncoderConfig: d_conv and d_fc must be >= 1");
    if (!(i_l > 0.0)) throw InvalidArgument("EncoderConfig: i_l must be > 0");
    if (i_in_g == i_out_g) throw InvalidArgument("EncoderConfig: i_in_g must differ from i_out_g");
    if (num_classes == 0) throw InvalidArgument("EncoderConfig: num_classes must be >= 1");
  }
};

struct MaskSet {
  Tensor masks;  // D_conv x N' x N'

  std::size_t count() const { return masks.dim(0); }
  std::size_t size() const { return masks.dim(1); }
  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

struct EncoderParams {
  std::optional<ConvParams> mwn_l;
  std::optional<ConvParams> mwn_g;
  Tensor fc_weight;   // D_fc x D_in
  Tensor fc_bias;     // D_fc
  Tensor cls_weight;  // (K+1) x D_fc
  Tensor cls_bias;
  Tensor reg_weight;  // 4 x D_fc
  Tensor reg_bias;

  /// Every tensor with its serialized name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (mwn_l) {
      out.emplace_back("mwn_l.kernels", &mwn_l->kernels);
      out.emplace_back("mwn_l.bias", &mwn_l->bias);
    }
    if (mwn_g) {
      out.emplace_back("mwn_g.kernels", &mwn_g->kernels);
      out.emplace_back("mwn_g.bias", &mwn_g->bias);
    }
    out.emplace_back("fc.weight", &fc_weight);
    out.emplace_back("fc.bias", &fc_bias);
    out.emplace_back("cls.weight", &cls_weight);
    out.emplace_back("cls.bias", &cls_bias);
    out.emplace_back("reg.weight", &reg_weight);
    out.emplace_back("reg.bias", &reg_bias);
    return out;
  }
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<EncoderParams*>(this)->named_tensors()) out.emplace_back(name, t);
    return out;
  }

  /// Zero-filled copy with identical structure, used as a gradient buffer.
  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    for (auto& entry : z.named_tensors()) *entry.second = Tensor::zeros_like(*entry.second);
    return z;
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    auto ta = a.named_tensors(), tb = b.named_tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta[i].first != tb[i].first || *ta[i].second != *tb[i].second) return false;
    }
    return true;
  }
};

inline ConvParams make_mwn_params(const EncoderConfig& cfg, Rng& rng) {
  return {rng.normal_tensor({cfg.d_conv, 1, cfg.n_prime, cfg.n_prime}, 0.01),
          Tensor({cfg.d_conv}), cfg.bias_enabled};
}

/// Fresh parameters: MWN kernels ~ N(0, 0.01^2) with zero bias, He-scaled FC,
/// classifier ~ N(0, 0.01^2), regressor ~ N(0, 0.001^2).
inline EncoderParams init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  if (has_mwn_l(cfg.variant)) p.mwn_l = make_mwn_params(cfg, rng);
  if (has_mwn_g(cfg.variant)) p.mwn_g = make_mwn_params(cfg, rng);
  const std::size_t d_in = cfg.fc_input_dim();
  p.fc_weight = rng.normal_tensor({cfg.d_fc, d_in}, std::sqrt(2.0 / static_cast<double>(d_in)));
  p.fc_bias = Tensor({cfg.d_fc});
  p.cls_weight = rng.normal_tensor({cfg.num_classes + 1, cfg.d_fc}, 0.01);
  p.cls_bias = Tensor({cfg.num_classes + 1});
  p.reg_weight = rng.normal_tensor({4, cfg.d_fc}, 0.001);
  p.reg_bias = Tensor({4});
  return p;
}

/// Constant raw mask of MWN-l.
inline Tensor unary_raw_mask(std::size_t n, double i_l) {
  if (!(i_l > 0.0)) throw InvalidArgument("unary_raw_mask: i_l must be > 0");
  if (n == 0) throw InvalidArgument("unary_raw_mask: size must be >= 1");
  return Tensor::full({n, n}, i_l);
}

inline void check_mwn_args(const Tensor& raw, const ConvParams& params) {
  raw.require_rank(2, "mwn raw mask");
  const std::size_t n = raw.dim(0);
  if (raw.dim(1) != n) throw ShapeError("mwn: raw mask must be square, got " + shape_string(raw.shape()));
  if (n % 2 == 0) throw InvalidArgument("mwn: mask size must be odd, got " + std::to_string(n));
  params.validate();
  if (params.kernel_size() != n || params.in_channels() != 1) {
    throw ShapeError("mwn: kernels " + shape_string(params.kernels.shape()) + " do not match raw mask " +
                     shape_string(raw.shape()));
  }
}

/// Same-size zero-padded convolution of the raw mask with D_conv N' x N' kernels.
inline MaskSet mwn_forward(const Tensor& raw, const ConvParams& params) {
  check_mwn_args(raw, params);
  const std::size_t n = raw.dim(0);
  return {conv2d_forward(raw.reshaped({1, n, n}), params, (n - 1) / 2)};
}

/// Accumulates kernel and bias gradients of mwn_forward into `grads`.
inline void mwn_backward_accumulate(const Tensor& raw, const ConvParams& params, const Tensor& grad_masks,
                                    ConvParams& grads) {
  check_mwn_args(raw, params);
  const std::size_t n = raw.dim(0);
  auto g = conv2d_backward(raw.reshaped({1, n, n}), params, (n - 1) / 2, grad_masks);
  grads.kernels += g.grad_kernels;
  if (params.bias_enabled) grads.bias += g.grad_bias;
}

/// Channel-wise masking: out(k, i, j) = f(k, i, j) * m(k, i, j).
inline Tensor apply_masks(const Tensor& f, const MaskSet& m) {
  f.require_rank(3, "apply_masks features");
  if (f.shape() != m.masks.shape()) {
    throw ShapeError("apply_masks: features " + shape_string(f.shape()) + " vs masks " +
                     shape_string(m.masks.shape()));
  }
  Tensor out = f;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m.masks[i];
  return out;
}

struct ApplyMasksGrads {
  Tensor grad_features;
  Tensor grad_masks;
};

inline ApplyMasksGrads apply_masks_backward(const Tensor& f, const MaskSet& m, const Tensor& grad_out) {
  f.require_same_shape(m.masks, "apply_masks_backward");
  f.require_same_shape(grad_out, "apply_masks_backward");
  ApplyMasksGrads g{grad_out, grad_out};
  for (std::size_t i = 0; i < f.size(); ++i) {
    g.grad_features[i] *= m.masks[i];
    g.grad_masks[i] *= f[i];
  }
  return g;
}

/// MWN-l masks depend only on the parameters, so inference may compute them
/// once. The cache remembers the parameters it was built from and rebuilds
/// when they change.
class LocalMaskCache {
 public:
  const MaskSet& get(const EncoderConfig& cfg, const EncoderParams& params) {
    if (!params.mwn_l) throw InvalidArgument("LocalMaskCache: variant has no MWN-l");
    if (!masks_ || source_.kernels != params.mwn_l->kernels || source_.bias != params.mwn_l->bias ||
        source_.bias_enabled != params.mwn_l->bias_enabled || i_l_ != cfg.i_l) {
      source_ = *params.mwn_l;
      i_l_ = cfg.i_l;
      masks_ = mwn_forward(unary_raw_mask(cfg.n_prime, cfg.i_l), source_);
      ++rebuilds_;
    }
    return *masks_;
  }
  std::size_t rebuilds() const { return rebuilds_; }

 private:
  std::optional<MaskSet> masks_;
  ConvParams source_;
  double i_l_ = 0.0;
  std::size_t rebuilds_ = 0;
};

inline MaskSet precompute_masks_l(const EncoderConfig& cfg, const EncoderParams& params) {
  if (!params.mwn_l) throw InvalidArgument("precompute_masks_l: variant has no MWN-l");
  return mwn_forward(unary_raw_mask(cfg.n_prime, cfg.i_l), *params.mwn_l);
}

/// Per-image inputs shared by all ROIs of that image.
struct EncoderInputs {
  const Tensor* fmap = nullptr;          // C x H x W, needed by the local branch
  const Tensor* image_pooled = nullptr;  // C x N' x N', needed by the global branch
  ImageExtent extent;                    // feature-map extent, for the context mask
};

struct BranchTrace {
  Tensor raw;     // raw mask fed to the MWN (global branch only)
  Tensor pooled;  // C x N' x N'
  MaskSet masks;  // empty when the branch bypasses masking
  Tensor masked;
  MaxPoolResult gmp;
};

struct RoiTrace {
  Roi roi;
  std::optional<BranchTrace> local;
  std::optional<BranchTrace> global;
  Tensor fc_in;
  Tensor fc_pre;
  Tensor feature;
};

namespace detail {

inline BranchTrace masked_branch(Tensor pooled, MaskSet masks) {
  BranchTrace b;
  b.pooled = std::move(pooled);
  b.masks = std::move(masks);
  b.masked = apply_masks(b.pooled, b.masks);
  b.gmp = global_max_pool(b.masked);
  return b;
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace detail

/// Forward pass of the encoder for one ROI, keeping intermediates for backward.
/// `local_masks` may supply precomputed MWN-l masks.
inline RoiTrace encode_trace(const EncoderInputs& in, const Roi& roi, const EncoderConfig& cfg,
                             const EncoderParams& params, const MaskSet* local_masks = nullptr) {
  const Variant v = cfg.variant;
  RoiTrace t;
  t.roi = roi;
  const std::size_t n = cfg.n_prime;

  if (has_local_branch(v)) {
    if (!in.fmap) throw InvalidArgument("encoder: local branch needs the ROI feature map");
    if (in.fmap->dim(0) != cfg.d_conv) {
      throw ShapeError("encoder: feature map has " + std::to_string(in.fmap->dim(0)) + " channels, config says " +
                       std::to_string(cfg.d_conv));
    }
    Tensor pooled = roi_avg_pool(*in.fmap, roi, n);
    MaskSet masks;
    if (has_mwn_l(v)) {
      if (!params.mwn_l) throw InvalidArgument("encoder: missing MWN-l parameters");
      masks = local_masks ? *local_masks : mwn_forward(unary_raw_mask(n, cfg.i_l), *params.mwn_l);
    } else {
      masks.masks = Tensor::full({cfg.d_conv, n, n}, cfg.i_l);
    }
    t.local = detail::masked_branch(std::move(pooled), std::move(masks));
  }

  if (has_global_branch(v)) {
    if (!in.image_pooled) throw InvalidArgument("encoder: global branch needs the pooled image map");
    if (in.image_pooled->shape() != Shape{cfg.d_conv, n, n}) {
      throw ShapeError("encoder: pooled image map must be " + shape_string({cfg.d_conv, n, n}) + ", got " +
                       shape_string(in.image_pooled->shape()));
    }
    if (has_mwn_g(v)) {
      if (!params.mwn_g) throw InvalidArgument("encoder: missing MWN-g parameters");
      Tensor raw = context_raw_mask(roi, in.extent, n, cfg.i_in_g, cfg.i_out_g);
      MaskSet masks = mwn_forward(raw, *params.mwn_g);
      t.global = detail::masked_branch(*in.image_pooled, std::move(masks));
      t.global->raw = std::move(raw);
    } else {
      BranchTrace b;
      b.pooled = *in.image_pooled;
      b.gmp = global_max_pool(b.pooled);
      t.global = std::move(b);
    }
  }

  if (t.local && t.global) {
    t.fc_in = detail::concat(t.local->gmp.values, t.global->gmp.values);
  } else {
    t.fc_in = t.local ? t.local->gmp.values : t.global->gmp.values;
  }
  t.fc_pre = fc_forward(t.fc_in, params.fc_weight, params.fc_bias);
  t.feature = relu_forward(t.fc_pre);
  return t;
}

struct HeadOutputs {
  Tensor class_scores;  // K+1, index K is background
  Tensor box_deltas;    // 4, class-agnostic
};

inline HeadOutputs heads(const Tensor& feature, const EncoderParams& params) {
  return {fc_forward(feature, params.cls_weight, params.cls_bias),
          fc_forward(feature, params.reg_weight, params.reg_bias)};
}

/// Backward through both heads; accumulates head gradients, returns d/dfeature.
inline Tensor heads_backward(const Tensor& feature, const EncoderParams& params, const Tensor& grad_scores,
                             const Tensor& grad_deltas, EncoderParams& grads) {
  auto gc = fc_backward(feature, params.cls_weight, grad_scores);
  auto gr = fc_backward(feature, params.reg_weight, grad_deltas);
  grads.cls_weight += gc.grad_weight;
  grads.cls_bias += gc.grad_bias;
  grads.reg_weight += gr.grad_weight;
  grads.reg_bias += gr.grad_bias;
  gc.grad_x += gr.grad_x;
  return std::move(gc.grad_x);
}

/// Where encoder_backward writes gradients that leave the encoder.
struct EncoderGradSinks {
  Tensor* grad_fmap = nullptr;          // same shape as the ROI feature map
  Tensor* grad_image_pooled = nullptr;  // same shape as the pooled image map
  // If set, MWN-l mask gradients are accumulated here instead of being pushed
  // through the MWN-l convolution; call mwn_l_backward once afterwards.
  Tensor* grad_local_masks = nullptr;
};

inline void mwn_l_backward(const EncoderConfig& cfg, const EncoderParams& params, const Tensor& grad_masks,
                           EncoderParams& grads) {
  mwn_backward_accumulate(unary_raw_mask(cfg.n_prime, cfg.i_l), *params.mwn_l, grad_masks, *grads.mwn_l);
}

/// Backward from d/dfeature through FC, GMP, masking, MWNs and ROI pooling.
inline void encoder_backward(const RoiTrace& t, const Tensor& grad_feature, const EncoderConfig& cfg,
                             const EncoderParams& params, EncoderParams& grads, const EncoderGradSinks& sinks) {
  const Tensor grad_pre = relu_backward(t.fc_pre, grad_feature);
  auto gfc = fc_backward(t.fc_in, params.fc_weight, grad_pre);
  grads.fc_weight += gfc.grad_weight;
  grads.fc_bias += gfc.grad_bias;

  const std::size_t d = cfg.d_conv;
  std::size_t offset = 0;
  auto next_branch_grad = [&]() {
    Tensor g({d});
    for (std::size_t k = 0; k < d; ++k) g[k] = gfc.grad_x[offset + k];
    offset += d;
    return g;
  };

  if (t.local) {
    const BranchTrace& b = *t.local;
    const Tensor grad_masked = global_max_pool_backward(b.masked.shape(), b.gmp.argmax, next_branch_grad());
    auto gm = apply_masks_backward(b.pooled, b.masks, grad_masked);
    if (sinks.grad_fmap) roi_avg_pool_backward_accumulate(*sinks.grad_fmap, t.roi, cfg.n_prime, gm.grad_features);
    if (has_mwn_l(cfg.variant)) {
      if (sinks.grad_local_masks) {
        *sinks.grad_local_masks += gm.grad_masks;
      } else {
        mwn_l_backward(cfg, params, gm.grad_masks, grads);
      }
    }
  }

  if (t.global) {
    const BranchTrace& b = *t.global;
    const Tensor gv = next_branch_grad();
    if (has_mwn_g(cfg.variant)) {
      const Tensor grad_masked = global_max_pool_backward(b.masked.shape(), b.gmp.argmax, gv);
      auto gm = apply_masks_backward(b.pooled, b.masks, grad_masked);
      if (sinks.grad_image_pooled) *sinks.grad_image_pooled += gm.grad_features;
      mwn_backward_accumulate(b.raw, *params.mwn_g, gm.grad_masks, *grads.mwn_g);
    } else if (sinks.grad_image_pooled) {
      *sinks.grad_image_pooled += global_max_pool_backward(b.pooled.shape(), b.gmp.argmax, gv);
    }
  }
}

inline Tensor encode(const EncoderInputs& in, const Roi& roi, const EncoderConfig& cfg, const EncoderParams& params,
                     const MaskSet* local_masks = nullptr) {
  return encode_trace(in, roi, cfg, params, local_masks).feature;
}

inline Tensor encode_l(const Tensor& fmap, const Roi& roi, const EncoderConfig& cfg, const EncoderParams& params,
                       const MaskSet* cached_masks = nullptr) {
  if (cfg.variant != Variant::kLocal && cfg.variant != Variant::kBaselineLocal) {
    throw InvalidArgument("encode_l: config variant is " + std::string(variant_name(cfg.variant)));
  }
  EncoderInputs in{&fmap, nullptr, {fmap.dim(2), fmap.dim(1)}};
  return encode(in, roi, cfg, params, cached_masks);
}

inline Tensor encode_g(const Tensor& image_pooled, const Roi& roi, const ImageExtent& extent,
                       const EncoderConfig& cfg, const EncoderParams& params) {
  if (cfg.variant != Variant::kGlobal) {
    throw InvalidArgument("encode_g: config variant is " + std::string(variant_name(cfg.variant)));
  }
  EncoderInputs in{nullptr, &image_pooled, extent};
  return encode(in, roi, cfg, params);
}

inline Tensor encode_lg(const Tensor& fmap, const Tensor& image_pooled, const Roi& roi, const ImageExtent& extent,
                        const EncoderConfig& cfg, const EncoderParams& params, const MaskSet* cached_masks = nullptr) {
  if (cfg.variant != Variant::kLocalGlobal && cfg.variant != Variant::kBaselineGlobal) {
    throw InvalidArgument("encode_lg: config variant is " + std::string(variant_name(cfg.variant)));
  }
  EncoderInputs in{&fmap, &image_pooled, extent};
  return encode(in, roi, cfg, params, cached_masks);
}

/// Parameter counts of one encoder configuration.
struct EncoderCounts {
  std::uint64_t fc_connections = 0;
  std::uint64_t mwn_parameters = 0;
  std::uint64_t encoder_parameters = 0;  // MWNs + FC weights + FC bias
};

inline EncoderCounts encoder_counts(const EncoderConfig& cfg) {
  EncoderCounts c;
  c.fc_connections = fc_connections(cfg.fc_input_dim(), cfg.d_fc);
  const std::uint64_t per_mwn =
      static_cast<std::uint64_t>(cfg.d_conv) * cfg.n_prime * cfg.n_prime + (cfg.bias_enabled ? cfg.d_conv : 0);
  c.mwn_parameters = per_mwn * ((has_mwn_l(cfg.variant) ? 1 : 0) + (has_mwn_g(cfg.variant) ? 1 : 0));
  c.encoder_parameters = c.mwn_parameters + c.fc_connections + cfg.d_fc;
  return c;
}

/// FC connections of the grid encoder: N x N ROI pooling into a D_fc1-wide FC.
constexpr std::uint64_t grid_encoder_connections(std::uint64_t n, std::uint64_t d_conv, std::uint64_t d_fc1) {
  return n * n * d_conv * d_fc1;
}

}  // namespace mwn
