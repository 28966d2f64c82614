#pragma once

// Central finite-difference checks of every analytic backward pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwn/mwn.hpp"
#include "mwn/ops.hpp"
#include "mwn/random.hpp"
#include "mwn/roi.hpp"
#include "mwn/tensor.hpp"
#include "mwn/toy/backbone.hpp"

namespace mwn {

struct GradTolerance {
  double eps = 1e-5;
  double rel = 1e-4;
  double abs = 1e-7;  // fallback for coordinates whose gradient is ~0
};

struct GradReport {
  std::string op;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  bool pass = true;

  friend bool operator==(const GradReport&, const GradReport&) = default;
};

class NonFiniteEvaluation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ScalarFn = std::function<double(const Tensor&)>;

/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
inline Tensor finite_diff(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
  Tensor g = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteEvaluation("finite_diff: non-finite function value at coordinate " + std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// Folds analytic-vs-numeric comparisons into one report.
class GradComparison {
 public:
  GradComparison(std::string op, GradTolerance tol, bool corrupt) : tol_(tol), corrupt_(corrupt) {
    report_.op = std::move(op);
  }

  void compare(const Tensor& analytic, const Tensor& numeric) {
    analytic.require_same_shape(numeric, "gradient comparison");
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      // negative-control fixture: a deliberately wrong backward
      const double a = corrupt_ ? analytic[i] * 1.01 + 1e-3 : analytic[i];
      const double n = numeric[i];
      const double abs_err = std::abs(a - n);
      const double scale = std::max(std::abs(a), std::abs(n));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      report_.max_abs_error = std::max(report_.max_abs_error, abs_err);
      // relative error is meaningless for gradients that are ~0
      if (scale > tol_.abs) report_.max_rel_error = std::max(report_.max_rel_error, rel_err);
      if (abs_err > tol_.abs && rel_err > tol_.rel) report_.pass = false;
      ++report_.checked;
    }
  }

  /// Numeric gradient of `f` at `x` compared against `analytic`.
  void check(const ScalarFn& f, const Tensor& x, const Tensor& analytic) {
    compare(analytic, finite_diff(f, x, tol_.eps));
  }

  GradReport report() const { return report_; }

 private:
  GradReport report_;
  GradTolerance tol_;
  bool corrupt_;
};

namespace gradcheck_detail {

inline double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

/// Smallest gap between the best and second-best entry of any channel.
inline double max_margin(const Tensor& x) {
  const std::size_t c = x.dim(0), plane = x.size() / c;
  double margin = INFINITY;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(ch * plane),
                          x.data().begin() + static_cast<std::ptrdiff_t>((ch + 1) * plane));
    if (v.size() < 2) continue;
    std::partial_sort(v.begin(), v.begin() + 2, v.end(), std::greater<>());
    margin = std::min(margin, v[0] - v[1]);
  }
  return margin;
}

inline double min_abs(const Tensor& x) {
  double m = INFINITY;
  for (double v : x.data()) m = std::min(m, std::abs(v));
  return m;
}

// Inputs are redrawn until every max has a clear winner and every ReLU input
// is away from zero, so the finite differences never straddle a kink.
inline constexpr double kKinkMargin = 1e-3;

struct LossTargets {
  std::size_t label;
  Tensor box_target;
};

inline double head_loss(const HeadOutputs& out, const LossTargets& t) {
  return softmax_cross_entropy(out.class_scores, t.label).loss + smooth_l1(out.box_deltas, t.box_target).loss;
}

inline GradReport check_conv2d(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("conv2d", tol, corrupt);
  const Tensor x = rng.uniform_tensor({2, 5, 5}, -1, 1);
  ConvParams p{rng.uniform_tensor({3, 2, 3, 3}, -1, 1), rng.uniform_tensor({3}, -1, 1), true};
  const Tensor w = rng.uniform_tensor({3, 5, 5}, -1, 1);
  const auto g = conv2d_backward(x, p, 1, w);
  cmp.check([&](const Tensor& v) { return weighted_sum(conv2d_forward(v, p, 1), w); }, x, g.grad_input);
  cmp.check([&](const Tensor& v) { ConvParams q = p; q.kernels = v; return weighted_sum(conv2d_forward(x, q, 1), w); },
            p.kernels, g.grad_kernels);
  cmp.check([&](const Tensor& v) { ConvParams q = p; q.bias = v; return weighted_sum(conv2d_forward(x, q, 1), w); },
            p.bias, g.grad_bias);
  return cmp.report();
}

inline GradReport check_fc(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("fc", tol, corrupt);
  const Tensor x = rng.uniform_tensor({6}, -1, 1);
  const Tensor wt = rng.uniform_tensor({4, 6}, -1, 1);
  const Tensor b = rng.uniform_tensor({4}, -1, 1);
  const Tensor w = rng.uniform_tensor({4}, -1, 1);
  const auto g = fc_backward(x, wt, w);
  cmp.check([&](const Tensor& v) { return weighted_sum(fc_forward(v, wt, b), w); }, x, g.grad_x);
  cmp.check([&](const Tensor& v) { return weighted_sum(fc_forward(x, v, b), w); }, wt, g.grad_weight);
  cmp.check([&](const Tensor& v) { return weighted_sum(fc_forward(x, wt, v), w); }, b, g.grad_bias);
  return cmp.report();
}

inline GradReport check_relu(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("relu", tol, corrupt);
  Tensor x = rng.uniform_tensor({12}, -1, 1);
  while (min_abs(x) < kKinkMargin) x = rng.uniform_tensor({12}, -1, 1);
  const Tensor w = rng.uniform_tensor({12}, -1, 1);
  cmp.check([&](const Tensor& v) { return weighted_sum(relu_forward(v), w); }, x, relu_backward(x, w));
  return cmp.report();
}

inline GradReport check_global_max_pool(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("global_max_pool", tol, corrupt);
  Tensor x = rng.uniform_tensor({3, 4, 4}, -1, 1);
  while (max_margin(x) < kKinkMargin) x = rng.uniform_tensor({3, 4, 4}, -1, 1);
  const Tensor w = rng.uniform_tensor({3}, -1, 1);
  const auto r = global_max_pool(x);
  cmp.check([&](const Tensor& v) { return weighted_sum(global_max_pool(v).values, w); }, x,
            global_max_pool_backward(x.shape(), r.argmax, w));
  return cmp.report();
}

inline GradReport check_roi_avg_pool(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("roi_avg_pool", tol, corrupt);
  const Tensor x = rng.uniform_tensor({2, 8, 8}, -1, 1);
  const Roi roi{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(5, 8), rng.uniform(5, 8), 0};
  const Tensor w = rng.uniform_tensor({2, 3, 3}, -1, 1);
  cmp.check([&](const Tensor& v) { return weighted_sum(roi_avg_pool(v, roi, 3), w); }, x,
            roi_avg_pool_backward(x.shape(), roi, 3, w));
  return cmp.report();
}

inline GradReport check_roi_max_pool(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("roi_max_pool", tol, corrupt);
  const Roi roi{1.0, 0.0, 7.0, 6.0, 0};
  Tensor x = rng.uniform_tensor({2, 8, 8}, -1, 1);
  while (max_margin(x) < kKinkMargin) x = rng.uniform_tensor({2, 8, 8}, -1, 1);
  const Tensor w = rng.uniform_tensor({2, 3, 3}, -1, 1);
  const auto r = roi_max_pool_with_argmax(x, roi, 3);
  cmp.check([&](const Tensor& v) { return weighted_sum(roi_max_pool(v, roi, 3), w); }, x,
            roi_max_pool_backward(x.shape(), r.argmax, w));
  return cmp.report();
}

inline GradReport check_apply_masks(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("apply_masks", tol, corrupt);
  const Tensor f = rng.uniform_tensor({3, 3, 3}, -1, 1);
  const MaskSet m{rng.uniform_tensor({3, 3, 3}, -1, 1)};
  const Tensor w = rng.uniform_tensor({3, 3, 3}, -1, 1);
  const auto g = apply_masks_backward(f, m, w);
  cmp.check([&](const Tensor& v) { return weighted_sum(apply_masks(v, m), w); }, f, g.grad_features);
  cmp.check([&](const Tensor& v) { return weighted_sum(apply_masks(f, MaskSet{v}), w); }, m.masks, g.grad_masks);
  return cmp.report();
}

inline GradReport check_mwn(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("mwn_forward", tol, corrupt);
  const Tensor raw = rng.uniform_tensor({3, 3}, -1, 1);
  const ConvParams p{rng.uniform_tensor({4, 1, 3, 3}, -1, 1), rng.uniform_tensor({4}, -1, 1), true};
  const Tensor w = rng.uniform_tensor({4, 3, 3}, -1, 1);
  ConvParams g{Tensor::zeros_like(p.kernels), Tensor::zeros_like(p.bias), true};
  mwn_backward_accumulate(raw, p, w, g);
  cmp.check([&](const Tensor& v) { ConvParams q = p; q.kernels = v; return weighted_sum(mwn_forward(raw, q).masks, w); },
            p.kernels, g.kernels);
  cmp.check([&](const Tensor& v) { ConvParams q = p; q.bias = v; return weighted_sum(mwn_forward(raw, q).masks, w); },
            p.bias, g.bias);
  return cmp.report();
}

inline GradReport check_softmax_cross_entropy(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("softmax_cross_entropy", tol, corrupt);
  const Tensor logits = rng.uniform_tensor({5}, -2, 2);
  const auto label = static_cast<std::size_t>(rng.below(5));
  cmp.check([&](const Tensor& v) { return softmax_cross_entropy(v, label).loss; }, logits,
            softmax_cross_entropy(logits, label).grad);
  return cmp.report();
}

inline GradReport check_smooth_l1(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("smooth_l1", tol, corrupt);
  const Tensor target = rng.uniform_tensor({4}, -1, 1);
  Tensor pred = rng.uniform_tensor({4}, -2.5, 2.5);
  auto near_kink = [&](const Tensor& p) {
    for (std::size_t i = 0; i < 4; ++i)
      if (std::abs(std::abs(p[i] - target[i]) - 1.0) < kKinkMargin || std::abs(p[i] - target[i]) < kKinkMargin) return true;
    return false;
  };
  while (near_kink(pred)) pred = rng.uniform_tensor({4}, -2.5, 2.5);
  cmp.check([&](const Tensor& v) { return smooth_l1(v, target).loss; }, pred, smooth_l1(pred, target).grad);
  return cmp.report();
}

inline GradReport check_heads(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("heads", tol, corrupt);
  EncoderConfig cfg;
  cfg.d_conv = 3;
  cfg.n_prime = 3;
  cfg.d_fc = 5;
  EncoderParams p = init_encoder_params(cfg, rng);
  p.cls_weight = rng.uniform_tensor(p.cls_weight.shape(), -1, 1);
  p.reg_weight = rng.uniform_tensor(p.reg_weight.shape(), -1, 1);
  const Tensor feature = rng.uniform_tensor({5}, 0, 1);
  const LossTargets t{static_cast<std::size_t>(rng.below(4)), rng.uniform_tensor({4}, -3, 3)};
  const HeadOutputs out = heads(feature, p);
  EncoderParams grads = p.zeros_like();
  const Tensor gfeat = heads_backward(feature, p, softmax_cross_entropy(out.class_scores, t.label).grad,
                                      smooth_l1(out.box_deltas, t.box_target).grad, grads);
  cmp.check([&](const Tensor& v) { return head_loss(heads(v, p), t); }, feature, gfeat);
  for (const char* name : {"cls.weight", "cls.bias", "reg.weight", "reg.bias"}) {
    auto find = [&](EncoderParams& e) -> Tensor& {
      for (auto& [n, tp] : e.named_tensors())
        if (n == name) return *tp;
      throw std::logic_error("missing tensor");
    };
    cmp.check([&](const Tensor& v) { EncoderParams q = p; find(q) = v; return head_loss(heads(feature, q), t); },
              find(p), find(grads));
  }
  return cmp.report();
}

/// Full encoder + heads for one ROI on a random feature map. The pooled image
/// map is derived from the same feature map, so d/dfmap covers both branches.
inline GradReport check_encoder(Variant variant, const std::string& name, Rng& rng, const GradTolerance& tol,
                                bool corrupt) {
  GradComparison cmp(name, tol, corrupt);
  EncoderConfig cfg;
  cfg.variant = variant;
  cfg.d_conv = 3;
  cfg.n_prime = 3;
  cfg.d_fc = 4;

  Tensor fmap;
  EncoderParams p;
  Roi roi;
  LossTargets t;
  auto forward = [&](const Tensor& f, const EncoderParams& q) {
    const Tensor pooled = image_pool(f, cfg.n_prime);
    const EncoderInputs in{&f, &pooled, {f.dim(2), f.dim(1)}};
    return encode_trace(in, roi, cfg, q);
  };
  auto well_conditioned = [&](const RoiTrace& tr) {
    if (min_abs(tr.fc_pre) < kKinkMargin) return false;
    if (tr.local && max_margin(tr.local->masked) < kKinkMargin) return false;
    if (tr.global && max_margin(tr.global->masks.masks.empty() ? tr.global->pooled : tr.global->masked) < kKinkMargin) {
      return false;
    }
    return true;
  };
  while (true) {
    fmap = rng.uniform_tensor({3, 8, 8}, 0, 1);
    p = init_encoder_params(cfg, rng);
    for (auto& entry : p.named_tensors()) *entry.second = rng.uniform_tensor(entry.second->shape(), -1, 1);
    roi = {rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(4.5, 8), rng.uniform(4.5, 8), 0};
    t = {static_cast<std::size_t>(rng.below(4)), rng.uniform_tensor({4}, -1, 1)};
    if (well_conditioned(forward(fmap, p))) break;
  }

  auto loss_of = [&](const Tensor& f, const EncoderParams& q) { return head_loss(heads(forward(f, q).feature, q), t); };

  // analytic
  const RoiTrace tr = forward(fmap, p);
  const HeadOutputs out = heads(tr.feature, p);
  EncoderParams grads = p.zeros_like();
  const Tensor gfeat = heads_backward(tr.feature, p, softmax_cross_entropy(out.class_scores, t.label).grad,
                                      smooth_l1(out.box_deltas, t.box_target).grad, grads);
  Tensor grad_fmap = Tensor::zeros_like(fmap);
  Tensor grad_pooled({cfg.d_conv, cfg.n_prime, cfg.n_prime});
  encoder_backward(tr, gfeat, cfg, p, grads, {&grad_fmap, &grad_pooled, nullptr});
  roi_avg_pool_backward_accumulate(grad_fmap, full_map_roi(fmap), cfg.n_prime, grad_pooled);

  cmp.check([&](const Tensor& v) { return loss_of(v, p); }, fmap, grad_fmap);
  auto named_grads = grads.named_tensors();
  auto named_params = p.named_tensors();
  for (std::size_t i = 0; i < named_params.size(); ++i) {
    cmp.check(
        [&](const Tensor& v) {
          EncoderParams q = p;
          *q.named_tensors()[i].second = v;
          return loss_of(fmap, q);
        },
        *named_params[i].second, *named_grads[i].second);
  }
  return cmp.report();
}

inline GradReport check_backbone(Rng& rng, const GradTolerance& tol, bool corrupt) {
  GradComparison cmp("tiny_backbone", tol, corrupt);
  for (std::size_t k3 : {std::size_t{1}, std::size_t{3}}) {
    toy::BackboneConfig cfg{1, 2, 3, 4, k3};
    Tensor image;
    toy::BackboneParams p;
    while (true) {
      image = rng.uniform_tensor({1, 12, 12}, 0, 1);
      p = toy::init_backbone_params(cfg, rng);
      for (auto& entry : p.named_tensors()) {
        if (entry.first.ends_with("bias")) *entry.second = rng.uniform_tensor(entry.second->shape(), -0.1, 0.1);
      }
      const auto tr = toy::backbone_forward(image, p);
      if (min_abs(tr.a1) > kKinkMargin && min_abs(tr.a2) > kKinkMargin && min_abs(tr.a3) > kKinkMargin) break;
    }
    const Tensor w = rng.uniform_tensor({4, 3, 3}, -1, 1);
    toy::BackboneParams grads = p;
    for (auto& entry : grads.named_tensors()) *entry.second = Tensor::zeros_like(*entry.second);
    const Tensor gimg = toy::backbone_backward(toy::backbone_forward(image, p), p, w, grads);
    cmp.check([&](const Tensor& v) { return weighted_sum(toy::tiny_backbone(v, p), w); }, image, gimg);
    auto pn = p.named_tensors();
    auto gn = grads.named_tensors();
    for (std::size_t i = 0; i < pn.size(); ++i) {
      cmp.check(
          [&](const Tensor& v) {
            toy::BackboneParams q = p;
            *q.named_tensors()[i].second = v;
            return weighted_sum(toy::tiny_backbone(image, q), w);
          },
          *pn[i].second, *gn[i].second);
    }
  }
  return cmp.report();
}

}  // namespace gradcheck_detail

/// Names of every operation check_all covers, sorted.
inline std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> ops = {"apply_masks", "conv2d", "encode_baseline_global", "encode_baseline_local",
                                  "encode_g", "encode_l", "encode_lg", "fc", "global_max_pool", "heads",
                                  "mwn_forward", "relu", "roi_avg_pool", "roi_max_pool", "smooth_l1",
                                  "softmax_cross_entropy", "tiny_backbone"};
  std::sort(ops.begin(), ops.end());
  return ops;
}

/// Runs every check with inputs drawn from `seed`; reports are sorted by op
/// name. `corrupt_op` names an op whose analytic gradient is deliberately
/// perturbed (negative control).
inline std::vector<GradReport> check_all(std::uint64_t seed, const std::optional<std::string>& corrupt_op = {},
                                         const GradTolerance& tol = {}) {
  using namespace gradcheck_detail;
  std::vector<GradReport> reports;
  std::uint64_t stream = 0;
  auto run = [&](const std::string& name, auto&& fn) {
    Rng rng = Rng::derive(seed, stream++);
    const bool corrupt = corrupt_op && *corrupt_op == name;
    reports.push_back(fn(rng, corrupt));
    reports.back().op = name;
  };
  run("conv2d", [&](Rng& r, bool c) { return check_conv2d(r, tol, c); });
  run("fc", [&](Rng& r, bool c) { return check_fc(r, tol, c); });
  run("relu", [&](Rng& r, bool c) { return check_relu(r, tol, c); });
  run("global_max_pool", [&](Rng& r, bool c) { return check_global_max_pool(r, tol, c); });
  run("roi_avg_pool", [&](Rng& r, bool c) { return check_roi_avg_pool(r, tol, c); });
  run("roi_max_pool", [&](Rng& r, bool c) { return check_roi_max_pool(r, tol, c); });
  run("apply_masks", [&](Rng& r, bool c) { return check_apply_masks(r, tol, c); });
  run("mwn_forward", [&](Rng& r, bool c) { return check_mwn(r, tol, c); });
  run("softmax_cross_entropy", [&](Rng& r, bool c) { return check_softmax_cross_entropy(r, tol, c); });
  run("smooth_l1", [&](Rng& r, bool c) { return check_smooth_l1(r, tol, c); });
  run("heads", [&](Rng& r, bool c) { return check_heads(r, tol, c); });
  run("encode_l", [&](Rng& r, bool c) { return check_encoder(Variant::kLocal, "encode_l", r, tol, c); });
  run("encode_g", [&](Rng& r, bool c) { return check_encoder(Variant::kGlobal, "encode_g", r, tol, c); });
  run("encode_lg", [&](Rng& r, bool c) { return check_encoder(Variant::kLocalGlobal, "encode_lg", r, tol, c); });
  run("encode_baseline_local",
      [&](Rng& r, bool c) { return check_encoder(Variant::kBaselineLocal, "encode_baseline_local", r, tol, c); });
  run("encode_baseline_global",
      [&](Rng& r, bool c) { return check_encoder(Variant::kBaselineGlobal, "encode_baseline_global", r, tol, c); });
  run("tiny_backbone", [&](Rng& r, bool c) { return check_backbone(r, tol, c); });
  std::sort(reports.begin(), reports.end(), [](const GradReport& a, const GradReport& b) { return a.op < b.op; });
  return reports;
}

}  // namespace mwn
