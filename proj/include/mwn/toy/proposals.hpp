#pragma once

// Proposal sampling in place of a region proposal network: jittered copies of
// the ground-truth boxes plus uniformly random boxes, labeled by IoU.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mwn/random.hpp"
#include "mwn/roi.hpp"
#include "mwn/tensor.hpp"
#include "mwn/toy/backbone.hpp"
#include "mwn/toy/scene.hpp"

namespace mwn::toy {

inline constexpr double kForegroundIou = 0.5;
inline constexpr std::size_t kBackground = kNumClasses;

// Fixed normalization of regression targets (Fast R-CNN convention).
inline constexpr double kDeltaStd[4] = {0.1, 0.1, 0.2, 0.2};

struct ProposalConfig {
  std::size_t per_scene = 16;
  double jitter_fraction = 0.5;   // share of proposals drawn around ground truth
  double min_foreground = 0.25;   // guaranteed foreground share when objects exist
  double scale_jitter = 0.25;
  double shift_jitter = 0.20;
};

struct Proposal {
  Box box;                  // image pixels
  std::size_t label = kBackground;
  Tensor target;            // normalized deltas, meaningful for foreground only
};

inline Roi to_feature_roi(const Box& b) {
  const auto s = static_cast<double>(kBackboneStride);
  return {b.x0 / s, b.y0 / s, b.x1 / s, b.y1 / s, 0};
}

inline Box clip_box(const Box& b) {
  const auto n = static_cast<double>(kImageSize);
  return {std::clamp(b.x0, 0.0, n), std::clamp(b.y0, 0.0, n), std::clamp(b.x1, 0.0, n), std::clamp(b.y1, 0.0, n)};
}

/// Normalized (dx, dy, dw, dh) taking `from` onto `to`.
inline Tensor encode_deltas(const Box& from, const Box& to) {
  const double fw = from.width(), fh = from.height();
  const double fx = from.x0 + 0.5 * fw, fy = from.y0 + 0.5 * fh;
  const double tw = to.width(), th = to.height();
  const double tx = to.x0 + 0.5 * tw, ty = to.y0 + 0.5 * th;
  return Tensor({4}, {(tx - fx) / fw / kDeltaStd[0], (ty - fy) / fh / kDeltaStd[1], std::log(tw / fw) / kDeltaStd[2],
                      std::log(th / fh) / kDeltaStd[3]});
}

inline Box apply_deltas(const Box& from, const Tensor& deltas) {
  const double fw = from.width(), fh = from.height();
  const double cx = from.x0 + 0.5 * fw + deltas[0] * kDeltaStd[0] * fw;
  const double cy = from.y0 + 0.5 * fh + deltas[1] * kDeltaStd[1] * fh;
  const double w = fw * std::exp(std::clamp(deltas[2] * kDeltaStd[2], -4.0, 4.0));
  const double h = fh * std::exp(std::clamp(deltas[3] * kDeltaStd[3], -4.0, 4.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

/// Labels `box` by its best-overlapping ground truth.
inline Proposal label_proposal(const Box& box, const std::vector<SceneObject>& objects) {
  Proposal p{box, kBackground, Tensor({4})};
  double best = 0.0;
  const SceneObject* match = nullptr;
  for (const auto& o : objects) {
    const double v = iou(box, o.box);
    if (v > best) {
      best = v;
      match = &o;
    }
  }
  if (match && best >= kForegroundIou) {
    p.label = match->label;
    p.target = encode_deltas(box, match->box);
  }
  return p;
}

inline Box jitter_box(const Box& gt, Rng& rng, const ProposalConfig& cfg) {
  const double w = gt.width() * (1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter));
  const double h = gt.height() * (1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter));
  const double cx = gt.x0 + 0.5 * gt.width() + gt.width() * rng.uniform(-cfg.shift_jitter, cfg.shift_jitter);
  const double cy = gt.y0 + 0.5 * gt.height() + gt.height() * rng.uniform(-cfg.shift_jitter, cfg.shift_jitter);
  return clip_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
}

inline Box random_box(Rng& rng) {
  const auto n = static_cast<double>(kImageSize);
  const double w = rng.uniform(kMinBoxSide, 40.0), h = rng.uniform(kMinBoxSide, 40.0);
  const double x0 = rng.uniform(0.0, n - w), y0 = rng.uniform(0.0, n - h);
  return {x0, y0, x0 + w, y0 + h};
}

inline std::vector<Proposal> make_proposals(const ToyScene& scene, Rng& rng, const ProposalConfig& cfg) {
  std::vector<Proposal> out;
  out.reserve(cfg.per_scene);
  const auto& objs = scene.objects;
  std::size_t jittered = objs.empty() ? 0 : static_cast<std::size_t>(std::ceil(cfg.jitter_fraction * static_cast<double>(cfg.per_scene)));
  const auto guaranteed = objs.empty() ? 0 : static_cast<std::size_t>(std::ceil(cfg.min_foreground * static_cast<double>(cfg.per_scene)));
  jittered = std::min(std::max(jittered, guaranteed), cfg.per_scene);

  for (std::size_t i = 0; i < jittered; ++i) {
    const SceneObject& o = objs[i % objs.size()];
    Box b = jitter_box(o.box, rng, cfg);
    if (i < guaranteed) {
      int tries = 0;
      while (iou(b, o.box) < kForegroundIou && ++tries < 20) b = jitter_box(o.box, rng, cfg);
      if (iou(b, o.box) < kForegroundIou) b = o.box;
    }
    out.push_back(label_proposal(b, objs));
  }
  while (out.size() < cfg.per_scene) out.push_back(label_proposal(random_box(rng), objs));
  return out;
}

}  // namespace mwn::toy
