#include <array>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "mwn/toy/backbone.hpp"
#include "mwn/toy/detector.hpp"
#include "mwn/toy/evaluation.hpp"
#include "mwn/toy/proposals.hpp"
#include "mwn/toy/scene.hpp"

using namespace mwn;
using namespace mwn::toy;

TEST(Scene, SameSeedSameScene) {
  EXPECT_EQ(scene_at(0, 5), scene_at(0, 5));
  EXPECT_NE(scene_at(0, 5).image, scene_at(0, 6).image);
  EXPECT_NE(scene_at(0, 5).image, scene_at(1, 5).image);
}

TEST(Scene, TenThousandScenesSatisfyInvariants) {
  std::array<std::size_t, kNumClasses> histogram{};
  std::size_t objects = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    const ToyScene s = scene_at(11, i);
    ASSERT_EQ(s.image.shape(), (Shape{1, kImageSize, kImageSize}));
    ASSERT_GE(s.image.min(), 0.0);
    ASSERT_LE(s.image.max(), 1.0);
    ASSERT_GE(s.objects.size(), 1u);
    ASSERT_LE(s.objects.size(), 3u);
    for (const auto& o : s.objects) {
      ASSERT_LT(o.label, kNumClasses);
      ASSERT_GE(o.box.x0, 0.0);
      ASSERT_GE(o.box.y0, 0.0);
      ASSERT_LE(o.box.x1, static_cast<double>(kImageSize));
      ASSERT_LE(o.box.y1, static_cast<double>(kImageSize));
      ASSERT_GE(o.box.width(), kMinBoxSide);
      ASSERT_GE(o.box.height(), kMinBoxSide);
      ++histogram[o.label];
      ++objects;
    }
  }
  // with the position prior the middle band collides more often, so only require every class to be common
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    EXPECT_GT(static_cast<double>(histogram[c]) / static_cast<double>(objects), 0.2) << "class " << c;
  }
}

TEST(Scene, LabelsUniformWithoutPositionPrior) {
  SceneConfig cfg;
  cfg.position_prior = false;
  std::array<std::size_t, kNumClasses> histogram{};
  std::size_t objects = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    for (const auto& o : scene_at(12, i, cfg).objects) {
      ++histogram[o.label];
      ++objects;
    }
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    EXPECT_NEAR(static_cast<double>(histogram[c]) / static_cast<double>(objects), 1.0 / 3.0, 0.02) << "class " << c;
  }
}

TEST(Scene, PositionPriorOrdersClassesTopToBottom) {
  std::array<double, kNumClasses> center_sum{};
  std::array<std::size_t, kNumClasses> count{};
  for (std::size_t i = 0; i < 2000; ++i) {
    for (const auto& o : scene_at(13, i).objects) {
      center_sum[o.label] += 0.5 * (o.box.y0 + o.box.y1);
      ++count[o.label];
    }
  }
  const double band = static_cast<double>(kImageSize) / kNumClasses;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double mean = center_sum[c] / static_cast<double>(count[c]);
    EXPECT_GT(mean, static_cast<double>(c) * band) << "class " << c;
    EXPECT_LT(mean, static_cast<double>(c + 1) * band) << "class " << c;
  }
}

TEST(Backbone, StrideFourOutput) {
  Rng rng(1);
  const BackboneConfig cfg;
  const BackboneParams p = init_backbone_params(cfg, rng);
  EXPECT_EQ(tiny_backbone(scene_at(0, 0).image, p).shape(), (Shape{cfg.out_channels, 16, 16}));
  BackboneConfig k3 = cfg;
  k3.conv3_kernel = 3;
  EXPECT_EQ(tiny_backbone(scene_at(0, 0).image, init_backbone_params(k3, rng)).shape(),
            (Shape{cfg.out_channels, 16, 16}));
}

TEST(Backbone, ZeroImageOutputComesFromBiases) {
  Rng rng(2);
  BackboneParams p = init_backbone_params({}, rng);
  const Tensor zero({1, kImageSize, kImageSize});
  EXPECT_EQ(tiny_backbone(zero, p).max(), 0.0);  // biases start at zero
  for (auto& [name, t] : p.named_tensors()) {
    if (name.ends_with("kernels")) *t = Tensor::zeros_like(*t);
  }
  p.conv3.bias = rng.uniform_tensor({32}, -1, 1);
  const Tensor out = tiny_backbone(zero, p);
  for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(out.channel(c), Tensor::full({16, 16}, std::max(0.0, p.conv3.bias[c])));
}

TEST(Proposals, GroundTruthBoxIsForegroundWithItsClass) {
  const ToyScene s = scene_at(0, 3);
  for (const auto& o : s.objects) {
    const Proposal p = label_proposal(o.box, s.objects);
    EXPECT_EQ(p.label, o.label);
    EXPECT_EQ(p.target, Tensor({4}));
  }
}

TEST(Proposals, DisjointBoxIsBackground) {
  const std::vector<SceneObject> objs = {{1, {0, 0, 20, 20}}};
  EXPECT_EQ(label_proposal({30, 30, 50, 50}, objs).label, kBackground);
}

TEST(Proposals, DeltasRoundTrip) {
  const Box a{3, 5, 30, 41}, b{6.5, 2, 28, 44};
  const Box back = apply_deltas(a, encode_deltas(a, b));
  EXPECT_NEAR(back.x0, b.x0, 1e-12);
  EXPECT_NEAR(back.y0, b.y0, 1e-12);
  EXPECT_NEAR(back.x1, b.x1, 1e-12);
  EXPECT_NEAR(back.y1, b.y1, 1e-12);
}

TEST(Proposals, LabelBalanceOverAThousandScenes) {
  const ProposalConfig cfg;
  const auto guaranteed = static_cast<std::size_t>(std::ceil(cfg.min_foreground * static_cast<double>(cfg.per_scene)));
  std::size_t fg = 0, total = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const ToyScene s = scene_at(21, i);
    Rng rng = Rng::derive(99, i);
    const auto props = make_proposals(s, rng, cfg);
    ASSERT_EQ(props.size(), cfg.per_scene);
    std::size_t scene_fg = 0;
    for (const auto& p : props) {
      ASSERT_GE(p.box.x0, 0.0);
      ASSERT_LE(p.box.x1, static_cast<double>(kImageSize));
      if (p.label != kBackground) ++scene_fg;
    }
    ASSERT_GE(scene_fg, guaranteed) << "scene " << i;
    fg += scene_fg;
    total += props.size();
  }
  const double share = static_cast<double>(fg) / static_cast<double>(total);
  EXPECT_GE(share, cfg.min_foreground);
  EXPECT_LE(share, cfg.jitter_fraction + 0.1);
}

TEST(Nms, SuppressesOverlapsKeepsBest) {
  std::vector<Detection> d = {{0, 0, 0.5, {0, 0, 10, 10}}, {0, 0, 0.9, {1, 0, 11, 10}}, {0, 0, 0.7, {30, 30, 40, 40}}};
  const auto kept = nms(d, 0.3);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.9);
  EXPECT_EQ(kept[1].score, 0.7);
  EXPECT_EQ(nms(d, 1.0).size(), 3u);
}

TEST(AveragePrecision, PerfectScorerIsOne) {
  std::vector<ToyScene> scenes;
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < 50; ++i) {
    scenes.push_back(scene_at(5, i));
    for (const auto& o : scenes.back().objects) dets.push_back({i, o.label, 1.0, o.box});
    dets.push_back({i, 0, 0.1, {0, 0, 1, 1}});  // false positive ranked last
  }
  EXPECT_EQ(mean_average_precision(dets, scenes), 1.0);
}

TEST(AveragePrecision, RandomScorerNearForegroundPrior) {
  // 100 true and 300 false positives in random order; reference mean 0.2804
  // from tests/oracles/derive_oracles.py
  const std::vector<std::vector<Box>> gt(100, std::vector<Box>{{0, 0, 10, 10}});
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Detection> dets;
    for (std::size_t s = 0; s < 100; ++s) {
      dets.push_back({s, 0, rng.uniform(), {0, 0, 10, 10}});
      for (int k = 0; k < 3; ++k) dets.push_back({s, 0, rng.uniform(), {20, 20, 30, 30}});
    }
    mean += average_precision(dets, gt) / 20.0;
  }
  EXPECT_NEAR(mean, 0.2804, 0.015);
}

TEST(AveragePrecision, DuplicatesCountAsFalsePositives) {
  const std::vector<std::vector<Box>> gt = {{{0, 0, 10, 10}}};
  const std::vector<Detection> one = {{0, 0, 0.9, {0, 0, 10, 10}}};
  std::vector<Detection> dup = one;
  dup.push_back({0, 0, 0.95, {0, 0, 10, 10}});
  EXPECT_EQ(average_precision(one, gt), 1.0);
  EXPECT_EQ(average_precision(dup, gt), 1.0);  // recall reached at rank 1
  const std::vector<Detection> miss = {{0, 0, 0.9, {0, 0, 4, 4}}};
  EXPECT_EQ(average_precision(miss, gt), 0.0);
  EXPECT_EQ(average_precision(one, {{}}), 0.0);
}

TEST(AveragePrecision, RankingAFalsePositiveHigherNeverHelps) {
  const std::vector<std::vector<Box>> gt = {{{0, 0, 10, 10}, {20, 20, 30, 30}}};
  std::vector<Detection> d = {{0, 0, 0.9, {0, 0, 10, 10}}, {0, 0, 0.5, {40, 40, 50, 50}}, {0, 0, 0.4, {20, 20, 30, 30}}};
  const double base = average_precision(d, gt);
  d[1].score = 0.95;
  EXPECT_LE(average_precision(d, gt), base);
  d[1].score = 0.1;
  EXPECT_GE(average_precision(d, gt), base);
  EXPECT_EQ(average_precision(d, gt), 1.0);
}

namespace {

TrainConfig short_run(std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  tc.steps = 300;
  tc.decay_step = 250;
  tc.eval_scenes = 40;
  return tc;
}

DetectorConfig detector_for(Variant v) {
  DetectorConfig cfg;
  cfg.encoder.variant = v;
  return cfg;
}

}  // namespace

TEST(Detector, TrainingReducesLossForEveryVariant) {
  for (Variant v : {Variant::kLocal, Variant::kGlobal, Variant::kLocalGlobal, Variant::kBaselineLocal,
                    Variant::kBaselineGlobal}) {
    const auto r = train(detector_for(v), short_run(0));
    ASSERT_EQ(r.loss_curve.size(), 300u);
    const double first = std::accumulate(r.loss_curve.begin(), r.loss_curve.begin() + 50, 0.0);
    const double last = std::accumulate(r.loss_curve.end() - 50, r.loss_curve.end(), 0.0);
    EXPECT_LT(last, first) << variant_name(v);
  }
}

TEST(Detector, TrainingIsBitReproducible) {
  const auto cfg = detector_for(Variant::kLocalGlobal);
  const auto a = train(cfg, short_run(4));
  const auto b = train(cfg, short_run(4));
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(encode_weights(a.params.to_named()), encode_weights(b.params.to_named()));
  EXPECT_EQ(evaluate(a.params, cfg, short_run(4)), evaluate(b.params, cfg, short_run(4)));
  EXPECT_NE(a.loss_curve, train(cfg, short_run(5)).loss_curve);
}

TEST(Detector, MaskCacheDoesNotChangeEvaluation) {
  const auto cfg = detector_for(Variant::kLocal);
  const auto r = train(cfg, short_run(1));
  EXPECT_EQ(evaluate(r.params, cfg, short_run(1), {true}), evaluate(r.params, cfg, short_run(1), {false}));
}

TEST(Detector, SceneGradientMatchesFiniteDifferenceOnMwnBias) {
  // spot-check of the full per-image pipeline including the shared mask path
  const auto cfg = detector_for(Variant::kLocalGlobal);
  const DetectorParams p = init_detector(cfg, 3);
  const ToyScene s = scene_at(3, 0);
  const auto props = training_proposals(s, short_run(3), 0);
  DetectorParams g = p.zeros_like();
  scene_loss_and_grad(s, props, cfg, p, g);
  for (std::size_t k : {0, 7, 31}) {
    auto loss_at = [&](double delta) {
      DetectorParams q = p;
      q.encoder.mwn_l->bias[k] += delta;
      DetectorParams unused = q.zeros_like();
      return scene_loss_and_grad(s, props, cfg, q, unused);
    };
    const double num = (loss_at(1e-5) - loss_at(-1e-5)) / 2e-5;
    EXPECT_NEAR(g.encoder.mwn_l->bias[k], num, 1e-7 + 1e-4 * std::abs(num)) << k;
  }
}

TEST(Detector, WeightsRoundTripThroughContainer) {
  const auto cfg = detector_for(Variant::kGlobal);
  const auto r = train(cfg, short_run(2));
  DetectorParams loaded = init_detector(cfg, 77);
  loaded.assign(decode_weights(encode_weights(r.params.to_named())));
  EXPECT_EQ(loaded.to_named(), r.params.to_named());
  DetectorParams wrong = init_detector(detector_for(Variant::kLocal), 0);
  EXPECT_THROW(wrong.assign(r.params.to_named()), WeightFileError);
}
