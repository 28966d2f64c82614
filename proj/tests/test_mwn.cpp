#include <gtest/gtest.h>

#include "mwn/mwn.hpp"
#include "mwn/random.hpp"

using namespace mwn;

namespace {

EncoderConfig tiny(Variant v, std::size_t d_conv = 4, std::size_t n = 3, std::size_t d_fc = 6) {
  EncoderConfig c;
  c.variant = v;
  c.d_conv = d_conv;
  c.n_prime = n;
  c.d_fc = d_fc;
  return c;
}

Roi random_roi(Rng& rng, double w, double h) {
  const double x0 = rng.uniform(0, w - 2), y0 = rng.uniform(0, h - 2);
  return {x0, y0, rng.uniform(x0 + 1, w), rng.uniform(y0 + 1, h), 0};
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST(Variant, NamesRoundTrip) {
  for (Variant v : {Variant::kLocal, Variant::kGlobal, Variant::kLocalGlobal, Variant::kBaselineLocal,
                    Variant::kBaselineGlobal}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
  EXPECT_EQ(variant_name(parse_variant("baseline-local")), "baseline-local");
  EXPECT_THROW(parse_variant("m-frcn-x"), InvalidArgument);
}

TEST(EncoderConfig, DefaultsAndValidation) {
  const EncoderConfig c;
  EXPECT_EQ(c.i_l, 1.0);
  EXPECT_EQ(c.i_in_g, 1.0);
  EXPECT_EQ(c.i_out_g, -1.0);
  EXPECT_NO_THROW(c.validate());
  EncoderConfig even = c;
  even.n_prime = 4;
  EXPECT_THROW(even.validate(), InvalidArgument);
  EncoderConfig neg = c;
  neg.i_l = 0.0;
  EXPECT_THROW(neg.validate(), InvalidArgument);
  EncoderConfig same = c;
  same.i_out_g = same.i_in_g;
  EXPECT_THROW(same.validate(), InvalidArgument);
}

TEST(UnaryRawMask, ConstantIl) {
  EXPECT_EQ(unary_raw_mask(3, 1.0), Tensor::full({3, 3}, 1.0));
  const Tensor m = unary_raw_mask(7, 2.5);
  EXPECT_EQ(m.min(), 2.5);
  EXPECT_EQ(m.max(), 2.5);
}

TEST(MwnForward, AllOnesKernelOnUnaryMask) {
  const ConvParams p{Tensor::full({1, 1, 3, 3}, 1.0), Tensor({1}), false};
  EXPECT_EQ(mwn_forward(unary_raw_mask(3, 1.0), p).masks, Tensor({1, 3, 3}, {4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(MwnForward, ZeroParametersGiveZeroMasks) {
  const ConvParams p{Tensor({5, 1, 3, 3}), Tensor({5}), true};
  EXPECT_EQ(mwn_forward(unary_raw_mask(3, 1.0), p).masks, Tensor({5, 3, 3}));
}

TEST(MwnForward, LinearInRawMaskWithoutBias) {
  Rng rng(1);
  const ConvParams p{rng.uniform_tensor({3, 1, 5, 5}, -1, 1), rng.uniform_tensor({3}, -1, 1), false};
  const Tensor raw = rng.uniform_tensor({5, 5}, -1, 1);
  const Tensor a = mwn_forward(raw, p).masks;
  const Tensor b = mwn_forward(0.5 * raw, p).masks;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(b[i], 0.5 * a[i]);
}

TEST(MwnForward, RejectsKernelSizeMismatch) {
  const ConvParams p{Tensor({2, 1, 3, 3}), Tensor({2}), true};
  EXPECT_THROW(mwn_forward(unary_raw_mask(5, 1.0), p), ShapeError);
}

TEST(ApplyMasks, IdentityZeroAndHomogeneity) {
  Rng rng(2);
  const Tensor f = rng.uniform_tensor({4, 3, 3}, -1, 1);
  EXPECT_EQ(apply_masks(f, MaskSet{Tensor::full({4, 3, 3}, 1.0)}), f);
  EXPECT_EQ(apply_masks(f, MaskSet{Tensor({4, 3, 3})}).max(), 0.0);
  const MaskSet m{rng.uniform_tensor({4, 3, 3}, -1, 1)};
  const Tensor a = apply_masks(f, m);
  const Tensor b = apply_masks(2.0 * f, m);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], 2.0 * a[i]);
}

TEST(ApplyMasks, ElementwiseProduct) {
  const Tensor f({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(apply_masks(f, MaskSet{Tensor({1, 2, 2}, {0, 1, 1, 0})}), Tensor({1, 2, 2}, {0, 2, 3, 0}));
  EXPECT_THROW(apply_masks(f, MaskSet{Tensor({1, 3, 3})}), ShapeError);
}

TEST(EncodeL, IdentityConfigurationGivesReluOfRoiMaxima) {
  EncoderConfig cfg = tiny(Variant::kLocal, 4, 3, 4);
  Rng rng(3);
  EncoderParams p = init_encoder_params(cfg, rng);
  p.mwn_l->kernels = Tensor({4, 1, 3, 3});
  p.mwn_l->bias = Tensor::full({4}, 1.0);
  p.fc_weight = identity(4);
  p.fc_bias = Tensor({4});
  const Tensor fmap = rng.uniform_tensor({4, 10, 10}, -1, 1);
  const Roi roi{1.5, 2.0, 8.2, 9.1, 0};
  const Tensor pooled = roi_avg_pool(fmap, roi, 3);
  const Tensor out = encode_l(fmap, roi, cfg, p);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out[c], std::max(0.0, pooled.channel(c).max()));
}

TEST(EncodeL, DeterministicAndRejectsWrongVariant) {
  const EncoderConfig cfg = tiny(Variant::kLocal);
  Rng rng(4);
  const EncoderParams p = init_encoder_params(cfg, rng);
  const Tensor fmap = rng.uniform_tensor({4, 12, 12}, 0, 1);
  const Roi roi = random_roi(rng, 12, 12);
  EXPECT_EQ(encode_l(fmap, roi, cfg, p), encode_l(fmap, roi, cfg, p));
  EXPECT_EQ(encode_l(fmap, roi, cfg, p).size(), cfg.d_fc);
  EXPECT_THROW(encode_l(fmap, roi, tiny(Variant::kGlobal), p), InvalidArgument);
}

TEST(EncodeL, CachedMasksMatchLiveConvolution) {
  const EncoderConfig cfg = tiny(Variant::kLocal, 6, 5, 8);
  Rng rng(5);
  const EncoderParams p = init_encoder_params(cfg, rng);
  LocalMaskCache cache;
  for (int t = 0; t < 100; ++t) {
    const Tensor fmap = rng.uniform_tensor({6, 14, 14}, 0, 1);
    const Roi roi = random_roi(rng, 14, 14);
    EXPECT_EQ(encode_l(fmap, roi, cfg, p, &cache.get(cfg, p)), encode_l(fmap, roi, cfg, p));
  }
  EXPECT_EQ(cache.rebuilds(), 1u);
}

TEST(LocalMaskCache, InvalidatedWhenParametersChange) {
  const EncoderConfig cfg = tiny(Variant::kLocal);
  Rng rng(6);
  EncoderParams p = init_encoder_params(cfg, rng);
  LocalMaskCache cache;
  const Tensor before = cache.get(cfg, p).masks;
  p.mwn_l->bias[0] += 1.0;
  const Tensor after = cache.get(cfg, p).masks;
  EXPECT_EQ(cache.rebuilds(), 2u);
  EXPECT_NE(before, after);
  EXPECT_EQ(after, precompute_masks_l(cfg, p).masks);
}

TEST(EncodeG, IdenticalRoisGiveIdenticalOutputs) {
  const EncoderConfig cfg = tiny(Variant::kGlobal);
  Rng rng(7);
  const EncoderParams p = init_encoder_params(cfg, rng);
  const Tensor pooled = rng.uniform_tensor({4, 3, 3}, 0, 1);
  const Roi roi{2.25, 1.5, 9.75, 11.0, 0};
  const Roi same = roi;
  EXPECT_EQ(encode_g(pooled, roi, {16, 16}, cfg, p), encode_g(pooled, same, {16, 16}, cfg, p));
  EXPECT_NE(encode_g(pooled, roi, {16, 16}, cfg, p), encode_g(pooled, {0, 0, 4, 4, 0}, {16, 16}, cfg, p));
}

TEST(EncodeG, FullImageRoiUsesConstantRawMask) {
  const EncoderConfig cfg = tiny(Variant::kGlobal);
  Rng rng(8);
  const EncoderParams p = init_encoder_params(cfg, rng);
  const Tensor pooled = rng.uniform_tensor({4, 3, 3}, 0, 1);
  const EncoderInputs in{nullptr, &pooled, {16, 16}};
  const RoiTrace t = encode_trace(in, {0, 0, 16, 16, 0}, cfg, p);
  EXPECT_EQ(t.global->raw, Tensor::full({3, 3}, cfg.i_in_g));
  EXPECT_EQ(t.global->masks.masks, mwn_forward(Tensor::full({3, 3}, cfg.i_in_g), *p.mwn_g).masks);
}

TEST(EncodeLg, ConcatenatesBranches) {
  const EncoderConfig cfg = tiny(Variant::kLocalGlobal);
  EXPECT_EQ(cfg.fc_input_dim(), 8u);
  Rng rng(9);
  EncoderParams p = init_encoder_params(cfg, rng);
  EXPECT_EQ(p.fc_weight.shape(), (Shape{6, 8}));
  const Tensor fmap = rng.uniform_tensor({4, 12, 12}, 0, 1);
  const Tensor pooled = image_pool(fmap, 3);
  const Roi roi{1, 2, 9, 10, 0};
  const Tensor out = encode_lg(fmap, pooled, roi, {12, 12}, cfg, p);
  EXPECT_EQ(out.size(), 6u);

  // with the g half of the FC zeroed the output only sees the l branch
  for (std::size_t o = 0; o < 6; ++o)
    for (std::size_t k = 4; k < 8; ++k) p.fc_weight.at(o, k) = 0.0;
  const EncoderInputs in{&fmap, &pooled, {12, 12}};
  const RoiTrace t = encode_trace(in, roi, cfg, p);
  Tensor expected = p.fc_bias;
  for (std::size_t o = 0; o < 6; ++o)
    for (std::size_t k = 0; k < 4; ++k) expected[o] += p.fc_weight.at(o, k) * t.local->gmp.values[k];
  EXPECT_EQ(t.fc_pre, expected);
}

TEST(BaselineLocal, AppliesUnaryMaskDirectly) {
  const EncoderConfig cfg = tiny(Variant::kBaselineLocal);
  Rng rng(10);
  const EncoderParams p = init_encoder_params(cfg, rng);
  EXPECT_FALSE(p.mwn_l.has_value());
  const Tensor fmap = rng.uniform_tensor({4, 12, 12}, 0, 1);
  const EncoderInputs in{&fmap, nullptr, {12, 12}};
  const RoiTrace t = encode_trace(in, {0, 0, 12, 12, 0}, cfg, p);
  EXPECT_EQ(t.local->masked, t.local->pooled);
}

TEST(BaselineGlobal, GlobalBranchIsUnmaskedMaxOfImageMap) {
  const EncoderConfig cfg = tiny(Variant::kBaselineGlobal);
  Rng rng(11);
  const EncoderParams p = init_encoder_params(cfg, rng);
  EXPECT_TRUE(p.mwn_l.has_value());
  EXPECT_FALSE(p.mwn_g.has_value());
  const Tensor fmap = rng.uniform_tensor({4, 12, 12}, 0, 1);
  const Tensor pooled = image_pool(fmap, 3);
  const EncoderInputs in{&fmap, &pooled, {12, 12}};
  const RoiTrace a = encode_trace(in, {0, 0, 5, 5, 0}, cfg, p);
  const RoiTrace b = encode_trace(in, {6, 6, 12, 12, 0}, cfg, p);
  EXPECT_EQ(a.global->gmp.values, global_max_pool(pooled).values);
  EXPECT_EQ(a.global->gmp.values, b.global->gmp.values);
}

TEST(Heads, ZeroFeatureGivesBiases) {
  const EncoderConfig cfg = tiny(Variant::kLocal);
  Rng rng(12);
  EncoderParams p = init_encoder_params(cfg, rng);
  p.cls_bias = rng.uniform_tensor({4}, -1, 1);
  p.reg_bias = rng.uniform_tensor({4}, -1, 1);
  const HeadOutputs out = heads(Tensor({cfg.d_fc}), p);
  EXPECT_EQ(out.class_scores.size(), 4u);
  EXPECT_EQ(out.class_scores, p.cls_bias);
  EXPECT_EQ(out.box_deltas, p.reg_bias);
}

TEST(EncoderCounts, ConnectionArithmetic) {
  EncoderConfig l = tiny(Variant::kLocal, 512, 7, 256);
  EXPECT_EQ(encoder_counts(l).fc_connections, 131072u);
  EXPECT_EQ(encoder_counts(l).mwn_parameters, 512u * 49 + 512);
  EncoderConfig lg = tiny(Variant::kLocalGlobal, 512, 7, 512);
  EXPECT_EQ(encoder_counts(lg).fc_connections, 524288u);
  EXPECT_EQ(encoder_counts(lg).mwn_parameters, 2u * (512 * 49 + 512));
  EXPECT_EQ(grid_encoder_connections(7, 512, 4096), 102760448u);
  static_assert(grid_encoder_connections(7, 512, 4096) == 102760448u);
}
