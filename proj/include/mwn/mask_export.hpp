#pragma once

// Mask export for inspection: 8-bit PGM (per-mask min-max normalized) next to
// a CSV of the raw values that reads back bit-exactly.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwn/mwn.hpp"
#include "mwn/roi.hpp"
#include "mwn/tensor.hpp"
#include "mwn/toy/scene.hpp"

namespace mwn {

class ExportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Min-max normalization to 0..255; a constant mask maps to 128 everywhere.
inline std::vector<unsigned char> mask_to_gray8(const Tensor& mask) {
  mask.require_rank(2, "mask_to_gray8");
  std::vector<unsigned char> px(mask.size(), 128);
  const double lo = mask.min(), hi = mask.max();
  if (!(hi > lo)) return px;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    px[i] = static_cast<unsigned char>(std::lround(255.0 * (mask[i] - lo) / (hi - lo)));
  }
  return px;
}

/// One row per mask row, comma separated, shortest round-trip decimals.
inline std::string mask_to_csv(const Tensor& mask) {
  mask.require_rank(2, "mask_to_csv");
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < mask.dim(0); ++i) {
    for (std::size_t j = 0; j < mask.dim(1); ++j) {
      if (j) out += ',';
      const auto r = std::to_chars(buf, buf + sizeof buf, mask.at(i, j));
      out.append(buf, r.ptr);
    }
    out += '\n';
  }
  return out;
}

inline Tensor mask_from_csv(const std::string& text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t n = 0, pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = std::min(line.find(',', pos), line.size());
      double v = 0.0;
      const auto r = std::from_chars(line.data() + pos, line.data() + comma, v);
      if (r.ec != std::errc() || r.ptr != line.data() + comma) {
        throw ExportError("mask CSV: bad number on row " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++n;
      pos = comma + 1;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw ExportError("mask CSV: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw ExportError("mask CSV: no rows");
  return Tensor({rows, cols}, std::move(values));
}

inline void write_mask_files(const std::filesystem::path& stem, const Tensor& mask) {
  toy::write_pgm(stem.string() + ".pgm", mask.dim(1), mask.dim(0), mask_to_gray8(mask));
  std::ofstream os(stem.string() + ".csv");
  os << mask_to_csv(mask);
  if (!os) throw ExportError("failed writing '" + stem.string() + ".csv'");
}

/// Canonical ROI positions for MWN-g export: a 3 x 3 grid of half-size ROIs
/// sliding over the map, plus the full map.
inline std::vector<std::pair<std::string, Roi>> canonical_rois(const ImageExtent& extent) {
  const double w = static_cast<double>(extent.width), h = static_cast<double>(extent.height);
  std::vector<std::pair<std::string, Roi>> out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double x0 = c * w / 4.0, y0 = r * h / 4.0;
      out.push_back({"r" + std::to_string(r) + "c" + std::to_string(c), {x0, y0, x0 + w / 2.0, y0 + h / 2.0, 0}});
    }
  }
  out.push_back({"full", {0.0, 0.0, w, h, 0}});
  return out;
}

struct ExportSummary {
  std::size_t local_masks = 0;
  std::size_t global_masks = 0;
};

/// Writes mwn_l/mask_KKK.{pgm,csv} and mwn_g/<roi>/mask_KKK.{pgm,csv} under
/// `dir` for whichever MWNs the configuration has.
inline ExportSummary export_masks(const std::filesystem::path& dir, const EncoderConfig& cfg,
                                  const EncoderParams& params, const ImageExtent& extent) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ExportError("cannot create '" + dir.string() + "': " + ec.message());
  ExportSummary s;
  auto write_set = [](const std::filesystem::path& sub, const MaskSet& m) {
    std::error_code e;
    std::filesystem::create_directories(sub, e);
    if (e) throw ExportError("cannot create '" + sub.string() + "': " + e.message());
    for (std::size_t k = 0; k < m.count(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "mask_%03zu", k);
      write_mask_files(sub / name, m.masks.channel(k));
    }
    return m.count();
  };
  if (has_mwn_l(cfg.variant)) s.local_masks = write_set(dir / "mwn_l", precompute_masks_l(cfg, params));
  if (has_mwn_g(cfg.variant)) {
    for (const auto& [label, roi] : canonical_rois(extent)) {
      const Tensor raw = context_raw_mask(roi, extent, cfg.n_prime, cfg.i_in_g, cfg.i_out_g);
      s.global_masks += write_set(dir / "mwn_g" / label, mwn_forward(raw, *params.mwn_g));
    }
  }
  return s;
}

}  // namespace mwn
