#pragma once

// Mapping between key/value configuration files and the typed detector and
// training settings.

#include <string>
#include <string_view>
#include <vector>

#include "mwn/config.hpp"
#include "mwn/mwn.hpp"
#include "mwn/toy/detector.hpp"

namespace mwn::toy {

struct RunSettings {
  DetectorConfig detector;
  TrainConfig train;
};

inline const std::vector<std::string_view>& run_config_keys() {
  static const std::vector<std::string_view> keys = {
      "variant", "n_prime", "d_conv", "d_fc", "i_l", "i_in_g", "i_out_g", "mwn_bias",
      "backbone_channels1", "backbone_channels2", "backbone_conv3_kernel",
      "seed", "steps", "lr", "decay_factor", "decay_step", "momentum", "weight_decay", "nms_threshold",
      "train_scenes", "eval_scenes", "eval_seed",
      "proposals_per_scene", "proposal_jitter_fraction", "proposal_min_foreground", "proposal_scale_jitter",
      "proposal_shift_jitter",
      "scene_min_side", "scene_max_side", "scene_part_offset", "scene_unmarked_rate", "scene_position_prior",
      // connection audit only
      "reference_n", "reference_d_fc1"};
  return keys;
}

inline RunSettings settings_from_config(const Config& c) {
  c.require_known(run_config_keys());
  RunSettings s;
  EncoderConfig& e = s.detector.encoder;
  try {
    e.variant = parse_variant(c.get_string("variant", std::string(variant_name(e.variant))));
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what(), c.line_of("variant"));
  }
  e.n_prime = c.get_uint("n_prime", e.n_prime);
  e.d_conv = c.get_uint("d_conv", e.d_conv);
  e.d_fc = c.get_uint("d_fc", e.d_fc);
  e.i_l = c.get_double("i_l", e.i_l);
  e.i_in_g = c.get_double("i_in_g", e.i_in_g);
  e.i_out_g = c.get_double("i_out_g", e.i_out_g);
  e.bias_enabled = c.get_bool("mwn_bias", e.bias_enabled);

  BackboneConfig& b = s.detector.backbone;
  b.out_channels = e.d_conv;
  b.channels1 = c.get_uint("backbone_channels1", b.channels1);
  b.channels2 = c.get_uint("backbone_channels2", b.channels2);
  b.conv3_kernel = c.get_uint("backbone_conv3_kernel", b.conv3_kernel);

  TrainConfig& t = s.train;
  t.seed = c.get_uint("seed", t.seed);
  t.steps = c.get_uint("steps", t.steps);
  t.lr = c.get_double("lr", t.lr);
  t.decay_factor = c.get_double("decay_factor", t.decay_factor);
  t.decay_step = c.get_uint("decay_step", t.decay_step);
  t.momentum = c.get_double("momentum", t.momentum);
  t.weight_decay = c.get_double("weight_decay", t.weight_decay);
  t.nms_threshold = c.get_double("nms_threshold", t.nms_threshold);
  t.train_scenes = c.get_uint("train_scenes", t.train_scenes);
  t.eval_scenes = c.get_uint("eval_scenes", t.eval_scenes);
  t.eval_seed = c.get_uint("eval_seed", t.eval_seed);
  t.proposals.per_scene = c.get_uint("proposals_per_scene", t.proposals.per_scene);
  t.proposals.jitter_fraction = c.get_double("proposal_jitter_fraction", t.proposals.jitter_fraction);
  t.proposals.min_foreground = c.get_double("proposal_min_foreground", t.proposals.min_foreground);
  t.proposals.scale_jitter = c.get_double("proposal_scale_jitter", t.proposals.scale_jitter);
  t.proposals.shift_jitter = c.get_double("proposal_shift_jitter", t.proposals.shift_jitter);
  t.scene.min_side = c.get_double("scene_min_side", t.scene.min_side);
  t.scene.max_side = c.get_double("scene_max_side", t.scene.max_side);
  t.scene.part_offset = c.get_double("scene_part_offset", t.scene.part_offset);
  t.scene.unmarked_rate = c.get_double("scene_unmarked_rate", t.scene.unmarked_rate);
  t.scene.position_prior = c.get_bool("scene_position_prior", t.scene.position_prior);

  try {
    s.detector.validate();
    t.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what());
  }
  if (t.scene.min_side < kMinBoxSide || t.scene.max_side < t.scene.min_side ||
      t.scene.max_side > static_cast<double>(kImageSize)) {
    throw ConfigError("scene box sides must satisfy 12 <= scene_min_side <= scene_max_side <= 64");
  }
  return s;
}

/// Every run setting as a Config; settings_from_config inverts it exactly.
inline Config settings_to_config(const RunSettings& s) {
  Config c;
  const EncoderConfig& e = s.detector.encoder;
  const BackboneConfig& b = s.detector.backbone;
  const TrainConfig& t = s.train;
  auto u = [](std::uint64_t v) { return std::to_string(v); };
  c.set("variant", std::string(variant_name(e.variant)));
  c.set("n_prime", u(e.n_prime));
  c.set("d_conv", u(e.d_conv));
  c.set("d_fc", u(e.d_fc));
  c.set("i_l", format_double(e.i_l));
  c.set("i_in_g", format_double(e.i_in_g));
  c.set("i_out_g", format_double(e.i_out_g));
  c.set("mwn_bias", e.bias_enabled ? "true" : "false");
  c.set("backbone_channels1", u(b.channels1));
  c.set("backbone_channels2", u(b.channels2));
  c.set("backbone_conv3_kernel", u(b.conv3_kernel));
  c.set("seed", u(t.seed));
  c.set("steps", u(t.steps));
  c.set("lr", format_double(t.lr));
  c.set("decay_factor", format_double(t.decay_factor));
  c.set("decay_step", u(t.decay_step));
  c.set("momentum", format_double(t.momentum));
  c.set("weight_decay", format_double(t.weight_decay));
  c.set("nms_threshold", format_double(t.nms_threshold));
  c.set("train_scenes", u(t.train_scenes));
  c.set("eval_scenes", u(t.eval_scenes));
  c.set("eval_seed", u(t.eval_seed));
  c.set("proposals_per_scene", u(t.proposals.per_scene));
  c.set("proposal_jitter_fraction", format_double(t.proposals.jitter_fraction));
  c.set("proposal_min_foreground", format_double(t.proposals.min_foreground));
  c.set("proposal_scale_jitter", format_double(t.proposals.scale_jitter));
  c.set("proposal_shift_jitter", format_double(t.proposals.shift_jitter));
  c.set("scene_min_side", format_double(t.scene.min_side));
  c.set("scene_max_side", format_double(t.scene.max_side));
  c.set("scene_part_offset", format_double(t.scene.part_offset));
  c.set("scene_unmarked_rate", format_double(t.scene.unmarked_rate));
  c.set("scene_position_prior", t.scene.position_prior ? "true" : "false");
  return c;
}

}  // namespace mwn::toy
