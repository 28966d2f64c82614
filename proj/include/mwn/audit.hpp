#pragma once

// Building blocks of the command-line audits: connection counts, merged
// gradient reports and the grid-pooling equivalence trials.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mwn/config.hpp"
#include "mwn/gradcheck.hpp"
#include "mwn/grid_equivalence.hpp"
#include "mwn/mwn.hpp"
#include "mwn/random.hpp"
#include "mwn/roi.hpp"

namespace mwn {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2 };

/// 102760448 -> "102,760,448".
inline std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v), out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

struct AuditRow {
  std::string label;
  std::uint64_t fc_connections = 0;
  std::uint64_t mwn_parameters = 0;
  std::uint64_t encoder_parameters = 0;
};

struct AuditSetup {
  EncoderConfig encoder;
  std::size_t reference_n = 7;
  std::size_t reference_d_fc1 = 4096;
};

/// Audit defaults are the VGG-16 sizes: 512 channels, D_fc 256, N' 7.
inline AuditSetup audit_setup_from_config(const Config& c, const std::vector<std::string_view>& known) {
  c.require_known(known);
  AuditSetup s;
  EncoderConfig& e = s.encoder;
  e.variant = Variant::kLocal;
  e.d_conv = 512;
  e.d_fc = 256;
  e.n_prime = 7;
  try {
    e.variant = parse_variant(c.get_string("variant", std::string(variant_name(e.variant))));
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what(), c.line_of("variant"));
  }
  e.d_conv = c.get_uint("d_conv", e.d_conv);
  e.d_fc = c.get_uint("d_fc", e.d_fc);
  e.n_prime = c.get_uint("n_prime", e.n_prime);
  e.bias_enabled = c.get_bool("mwn_bias", e.bias_enabled);
  s.reference_n = c.get_uint("reference_n", s.reference_n);
  s.reference_d_fc1 = c.get_uint("reference_d_fc1", s.reference_d_fc1);
  try {
    e.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what());
  }
  if (s.reference_n == 0 || s.reference_d_fc1 == 0) throw ConfigError("reference_n and reference_d_fc1 must be >= 1");
  return s;
}

inline std::vector<AuditRow> audit_rows(const AuditSetup& s) {
  const EncoderConfig& e = s.encoder;
  const EncoderCounts c = encoder_counts(e);
  std::vector<AuditRow> rows;
  rows.push_back({std::string(variant_name(e.variant)) + " (D_conv=" + std::to_string(e.d_conv) +
                      ", D_fc=" + std::to_string(e.d_fc) + ", N'=" + std::to_string(e.n_prime) + ")",
                  c.fc_connections, c.mwn_parameters, c.encoder_parameters});
  const std::uint64_t ref = grid_encoder_connections(s.reference_n, e.d_conv, s.reference_d_fc1);
  rows.push_back({"reference grid pooling (N=" + std::to_string(s.reference_n) + ", D_conv=" +
                      std::to_string(e.d_conv) + ", D_fc1=" + std::to_string(s.reference_d_fc1) + ")",
                  ref, 0, ref + s.reference_d_fc1});
  return rows;
}

/// Runs check_all for `trials` consecutive seeds and merges by op name: worst
/// errors, summed coordinate counts, pass only if every seed passed.
inline std::vector<GradReport> merged_gradcheck(std::uint64_t seed, std::size_t trials,
                                                const std::optional<std::string>& corrupt_op = {}) {
  std::map<std::string, GradReport> merged;
  for (std::size_t t = 0; t < trials; ++t) {
    for (const GradReport& r : check_all(seed + t, corrupt_op)) {
      auto [it, fresh] = merged.try_emplace(r.op, r);
      if (fresh) continue;
      GradReport& m = it->second;
      m.max_rel_error = std::max(m.max_rel_error, r.max_rel_error);
      m.max_abs_error = std::max(m.max_abs_error, r.max_abs_error);
      m.checked += r.checked;
      m.pass = m.pass && r.pass;
    }
  }
  std::vector<GradReport> out;
  for (auto& [op, r] : merged) out.push_back(r);
  return out;
}

struct AlignedInstance {
  Tensor fmap;
  Roi roi;
};

/// Random feature map (signed values) and a random ROI whose integer sides are
/// multiples of n_prime.
inline AlignedInstance random_aligned_instance(Rng& rng, const GridMaskSpec& spec) {
  const std::size_t np = spec.n_prime;
  const auto cells_w = np * static_cast<std::size_t>(rng.uniform_int(1, 3));
  const auto cells_h = np * static_cast<std::size_t>(rng.uniform_int(1, 3));
  const std::size_t width = cells_w + static_cast<std::size_t>(rng.uniform_int(0, 6));
  const std::size_t height = cells_h + static_cast<std::size_t>(rng.uniform_int(0, 6));
  const auto channels = static_cast<std::size_t>(rng.uniform_int(1, 4));
  AlignedInstance inst;
  inst.fmap = rng.normal_tensor({channels, height, width}, 1.0);
  const auto x0 = static_cast<double>(rng.uniform_int(0, static_cast<int>(width - cells_w)));
  const auto y0 = static_cast<double>(rng.uniform_int(0, static_cast<int>(height - cells_h)));
  inst.roi = {x0, y0, x0 + static_cast<double>(cells_w), y0 + static_cast<double>(cells_h), 0};
  return inst;
}

struct EquivalenceResult {
  GridMaskSpec spec;
  std::size_t trials = 0;
  std::size_t exact = 0;
};

inline EquivalenceResult run_equivalence(const GridMaskSpec& spec, std::size_t trials, std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::derive(seed, spec.n * 1000 + spec.n_prime);
  EquivalenceResult r{spec, trials, 0};
  for (std::size_t t = 0; t < trials; ++t) {
    const AlignedInstance inst = random_aligned_instance(rng, spec);
    if (masked_grid_pool(inst.fmap, inst.roi, spec) == roi_max_pool(inst.fmap, inst.roi, spec.n)) ++r.exact;
  }
  return r;
}

inline const std::vector<GridMaskSpec>& equivalence_specs() {
  static const std::vector<GridMaskSpec> specs = {{1, 1}, {1, 3}, {2, 4}, {2, 8}, {3, 9}, {7, 14}};
  return specs;
}

}  // namespace mwn
