#pragma once

// End-to-end toy detector: backbone + mask-based encoder + heads, trained
// jointly with SGD (one image per step) and evaluated by AP@0.5.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mwn/mwn.hpp"
#include "mwn/ops.hpp"
#include "mwn/random.hpp"
#include "mwn/weights_io.hpp"
#include "mwn/toy/backbone.hpp"
#include "mwn/toy/evaluation.hpp"
#include "mwn/toy/proposals.hpp"
#include "mwn/toy/scene.hpp"

namespace mwn::toy {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 2500;
  double lr = 0.01;
  double decay_factor = 10.0;
  std::size_t decay_step = 2000;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double nms_threshold = 0.3;
  std::size_t train_scenes = 2000;
  std::size_t eval_scenes = 200;
  std::uint64_t eval_seed = 1000003;
  ProposalConfig proposals;
  SceneConfig scene;

  void validate() const {
    if (steps == 0 || train_scenes == 0 || eval_scenes == 0 || proposals.per_scene == 0) {
      throw InvalidArgument("TrainConfig: counts must be positive");
    }
    if (decay_step >= steps) throw InvalidArgument("TrainConfig: decay_step must be < steps");
    if (!(lr > 0.0) || !(decay_factor > 0.0)) throw InvalidArgument("TrainConfig: lr and decay_factor must be > 0");
  }

  double lr_at(std::size_t step) const { return step < decay_step ? lr : lr / decay_factor; }
};

struct DetectorConfig {
  EncoderConfig encoder;
  BackboneConfig backbone;

  void validate() const {
    encoder.validate();
    if (encoder.d_conv != backbone.out_channels) {
      throw InvalidArgument("DetectorConfig: encoder d_conv must equal backbone output channels");
    }
    if (encoder.num_classes != kNumClasses) throw InvalidArgument("DetectorConfig: toy scenes have 3 classes");
  }
};

struct DetectorParams {
  BackboneParams backbone;
  EncoderParams encoder;

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    auto out = backbone.named_tensors();
    for (auto& e : encoder.named_tensors()) out.push_back(e);
    return out;
  }

  DetectorParams zeros_like() const {
    DetectorParams z = *this;
    for (auto& e : z.named_tensors()) *e.second = Tensor::zeros_like(*e.second);
    return z;
  }

  NamedTensors to_named() const {
    NamedTensors out;
    for (auto& [name, t] : const_cast<DetectorParams*>(this)->named_tensors()) out.emplace_back(name, *t);
    return out;
  }

  /// Fills every tensor of this (already shaped) parameter set from `named`.
  void assign(const NamedTensors& named) {
    for (auto& [name, t] : named_tensors()) {
      const Tensor& src = find_tensor(named, name);
      if (src.shape() != t->shape()) {
        throw WeightFileError("tensor '" + name + "' has shape " + shape_string(src.shape()) + ", expected " +
                              shape_string(t->shape()));
      }
      *t = src;
    }
  }
};

inline DetectorParams init_detector(const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::derive(seed, 0xB0B);
  DetectorParams p;
  p.backbone = init_backbone_params(cfg.backbone, rng);
  p.encoder = init_encoder_params(cfg.encoder, rng);
  return p;
}

/// Per-image quantities shared by every proposal.
struct SceneFeatures {
  BackboneTrace backbone;
  Tensor image_pooled;
  std::optional<MaskSet> local_masks;

  EncoderInputs inputs() const {
    const Tensor& f = backbone.output;
    return {&f, image_pooled.empty() ? nullptr : &image_pooled, {f.dim(2), f.dim(1)}};
  }
};

/// Backbone pass plus per-image encoder inputs. MWN-l masks come from `cache`
/// when given, otherwise from a live convolution.
inline SceneFeatures scene_features(const ToyScene& scene, const DetectorConfig& cfg, const DetectorParams& params,
                                    LocalMaskCache* cache = nullptr) {
  SceneFeatures f;
  f.backbone = backbone_forward(scene.image, params.backbone);
  if (has_global_branch(cfg.encoder.variant)) f.image_pooled = image_pool(f.backbone.output, cfg.encoder.n_prime);
  if (has_mwn_l(cfg.encoder.variant)) {
    f.local_masks = cache ? cache->get(cfg.encoder, params.encoder) : precompute_masks_l(cfg.encoder, params.encoder);
  }
  return f;
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss and gradient of one scene; the loss is averaged over proposals.
inline double scene_loss_and_grad(const ToyScene& scene, const std::vector<Proposal>& proposals,
                                  const DetectorConfig& cfg, const DetectorParams& params, DetectorParams& grads) {
  const EncoderConfig& ec = cfg.encoder;
  // Masks are computed once per image and their gradient pushed through the
  // MWN-l convolution once, which is the same as doing it per proposal.
  SceneFeatures f = scene_features(scene, cfg, params);
  const EncoderInputs in = f.inputs();
  Tensor grad_fmap = Tensor::zeros_like(f.backbone.output);
  Tensor grad_image_pooled = f.image_pooled.empty() ? Tensor() : Tensor::zeros_like(f.image_pooled);
  Tensor grad_local_masks = f.local_masks ? Tensor::zeros_like(f.local_masks->masks) : Tensor();
  EncoderGradSinks sinks{&grad_fmap, f.image_pooled.empty() ? nullptr : &grad_image_pooled,
                         f.local_masks ? &grad_local_masks : nullptr};

  const double inv = 1.0 / static_cast<double>(proposals.size());
  double loss = 0.0;
  for (const auto& p : proposals) {
    const RoiTrace t = encode_trace(in, to_feature_roi(p.box), ec, params.encoder,
                                    f.local_masks ? &*f.local_masks : nullptr);
    const HeadOutputs out = heads(t.feature, params.encoder);
    auto ce = softmax_cross_entropy(out.class_scores, p.label);
    loss += inv * ce.loss;
    ce.grad *= inv;
    Tensor grad_deltas({4});
    if (p.label != kBackground) {
      auto reg = smooth_l1(out.box_deltas, p.target);
      loss += inv * reg.loss;
      grad_deltas = inv * std::move(reg.grad);
    }
    const Tensor grad_feature = heads_backward(t.feature, params.encoder, ce.grad, grad_deltas, grads.encoder);
    encoder_backward(t, grad_feature, ec, params.encoder, grads.encoder, sinks);
  }
  if (f.local_masks) mwn_l_backward(ec, params.encoder, grad_local_masks, grads.encoder);
  if (!f.image_pooled.empty()) {
    roi_avg_pool_backward_accumulate(grad_fmap, full_map_roi(f.backbone.output), ec.n_prime, grad_image_pooled);
  }
  backbone_backward(f.backbone, params.backbone, grad_fmap, grads.backbone);
  return loss;
}

struct TrainResult {
  DetectorParams params;
  std::vector<double> loss_curve;  // one entry per step
};

inline std::vector<Proposal> training_proposals(const ToyScene& scene, const TrainConfig& tc, std::size_t step) {
  Rng rng = Rng::derive(tc.seed ^ 0x5EED5EEDULL, step);
  return make_proposals(scene, rng, tc.proposals);
}

inline TrainResult train(const DetectorConfig& cfg, const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  TrainResult r{init_detector(cfg, tc.seed), {}};
  DetectorParams velocity = r.params.zeros_like();
  Rng order = Rng::derive(tc.seed, 0x0DE5);
  r.loss_curve.reserve(tc.steps);

  for (std::size_t step = 0; step < tc.steps; ++step) {
    const ToyScene scene = scene_at(tc.seed, order.below(tc.train_scenes), tc.scene);
    const auto proposals = training_proposals(scene, tc, step);
    DetectorParams grads = r.params.zeros_like();
    const double loss = scene_loss_and_grad(scene, proposals, cfg, r.params, grads);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) +
                             ")");
    }
    r.loss_curve.push_back(loss);

    const SgdOptions opt{tc.lr_at(step), tc.momentum, tc.weight_decay};
    auto p = r.params.named_tensors(), g = grads.named_tensors(), v = velocity.named_tensors();
    for (std::size_t i = 0; i < p.size(); ++i) sgd_momentum_step(*p[i].second, *g[i].second, *v[i].second, opt);
  }
  return r;
}

/// Scores every proposal of `scene` and returns per-class detections after
/// NMS. Scores are softmax probabilities; boxes are regressed proposals.
inline std::vector<Detection> detect(const ToyScene& scene, std::size_t scene_index,
                                     const std::vector<Proposal>& proposals, const DetectorConfig& cfg,
                                     const DetectorParams& params, double nms_threshold,
                                     LocalMaskCache* cache = nullptr) {
  const SceneFeatures f = scene_features(scene, cfg, params, cache);
  const EncoderInputs in = f.inputs();
  std::vector<std::vector<Detection>> per_class(kNumClasses);
  for (const auto& p : proposals) {
    const Tensor feature =
        encode(in, to_feature_roi(p.box), cfg.encoder, params.encoder, f.local_masks ? &*f.local_masks : nullptr);
    const HeadOutputs out = heads(feature, params.encoder);
    const Tensor prob = softmax(out.class_scores);
    const Box box = clip_box(apply_deltas(p.box, out.box_deltas));
    for (std::size_t c = 0; c < kNumClasses; ++c) per_class[c].push_back({scene_index, c, prob[c], box});
  }
  std::vector<Detection> out;
  for (auto& dets : per_class) {
    for (auto& d : nms(std::move(dets), nms_threshold)) out.push_back(d);
  }
  return out;
}

struct EvalOptions {
  bool use_mask_cache = true;
};

inline std::vector<Proposal> evaluation_proposals(const ToyScene& scene, const TrainConfig& tc, std::size_t index) {
  Rng rng = Rng::derive(tc.eval_seed ^ 0xE7A1ULL, index);
  return make_proposals(scene, rng, tc.proposals);
}

/// AP@0.5 averaged over classes on `tc.eval_scenes` held-out scenes.
inline double evaluate(const DetectorParams& params, const DetectorConfig& cfg, const TrainConfig& tc,
                       const EvalOptions& opt = {}) {
  LocalMaskCache cache;
  std::vector<ToyScene> scenes;
  std::vector<Detection> dets;
  scenes.reserve(tc.eval_scenes);
  for (std::size_t i = 0; i < tc.eval_scenes; ++i) {
    scenes.push_back(scene_at(tc.eval_seed, i, tc.scene));
    const auto proposals = evaluation_proposals(scenes.back(), tc, i);
    auto d = detect(scenes.back(), i, proposals, cfg, params, tc.nms_threshold, opt.use_mask_cache ? &cache : nullptr);
    dets.insert(dets.end(), d.begin(), d.end());
  }
  return mean_average_precision(dets, scenes, kForegroundIou);
}

}  // namespace mwn::toy
