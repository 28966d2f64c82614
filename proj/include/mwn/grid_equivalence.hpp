#pragma once

// N x N grid max ROI pooling rebuilt from an N' x N' max ROI pooling, N^2
// binary block masks and per-channel global max pooling. For ROIs whose sides
// are multiples of N' the result equals direct N x N max pooling exactly,
// because every N x N bin is the disjoint union of the N' x N' bins its mask
// selects.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mwn/roi.hpp"
#include "mwn/tensor.hpp"

namespace mwn {

struct GridMaskSpec {
  std::size_t n = 2;        // output grid
  std::size_t n_prime = 4;  // initial pooling, a multiple of n

  void validate() const {
    if (n == 0 || n_prime == 0) throw InvalidArgument("GridMaskSpec: sizes must be >= 1");
    if (n_prime % n != 0) {
      throw InvalidArgument("GridMaskSpec: n_prime " + std::to_string(n_prime) + " is not a multiple of n " +
                            std::to_string(n));
    }
  }
};

/// The N^2 binary N' x N' masks in raster-scan order of their grid cells.
inline std::vector<Tensor> grid_masks(const GridMaskSpec& spec) {
  spec.validate();
  const std::size_t block = spec.n_prime / spec.n;
  std::vector<Tensor> masks;
  masks.reserve(spec.n * spec.n);
  for (std::size_t a = 0; a < spec.n; ++a) {
    for (std::size_t b = 0; b < spec.n; ++b) {
      Tensor m({spec.n_prime, spec.n_prime});
      for (std::size_t i = a * block; i < (a + 1) * block; ++i)
        for (std::size_t j = b * block; j < (b + 1) * block; ++j) m.at(i, j) = 1.0;
      masks.push_back(std::move(m));
    }
  }
  return masks;
}

/// Rejects ROIs for which the construction is not exact: integer corners
/// inside the map and side lengths divisible by N'.
inline void require_aligned_roi(const Shape& fmap_shape, const Roi& roi, const GridMaskSpec& spec) {
  if (fmap_shape.size() != 3) throw ShapeError("masked_grid_pool: feature map must be C x H x W");
  auto integral = [](double v) { return std::isfinite(v) && v == std::floor(v); };
  if (!integral(roi.x0) || !integral(roi.y0) || !integral(roi.x1) || !integral(roi.y1)) {
    throw InvalidArgument("masked_grid_pool: ROI corners must be integer cells for exact equivalence");
  }
  if (roi.x0 < 0 || roi.y0 < 0 || roi.x1 > static_cast<double>(fmap_shape[2]) ||
      roi.y1 > static_cast<double>(fmap_shape[1]) || !(roi.x1 > roi.x0) || !(roi.y1 > roi.y0)) {
    throw InvalidArgument("masked_grid_pool: ROI must be nonempty and inside the feature map");
  }
  const auto w = static_cast<std::size_t>(roi.x1 - roi.x0), h = static_cast<std::size_t>(roi.y1 - roi.y0);
  if (w % spec.n_prime != 0 || h % spec.n_prime != 0) {
    throw InvalidArgument("masked_grid_pool: ROI is misaligned; its " + std::to_string(w) + "x" + std::to_string(h) +
                          " cells are not divisible by n_prime=" + std::to_string(spec.n_prime) +
                          ", so initial pooling bins would straddle grid cells");
  }
}

/// Grid pooling via masks, taking each GMP over the mask's support only, so
/// masked-out entries never win regardless of sign.
inline Tensor masked_grid_pool(const Tensor& fmap, const Roi& roi, const GridMaskSpec& spec) {
  spec.validate();
  require_aligned_roi(fmap.shape(), roi, spec);
  const Tensor pooled = roi_max_pool(fmap, roi, spec.n_prime);
  const auto masks = grid_masks(spec);
  const std::size_t c = fmap.dim(0), np = spec.n_prime;
  Tensor out({c, spec.n, spec.n});
  for (std::size_t m = 0; m < masks.size(); ++m) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j)
          if (masks[m].at(i, j) != 0.0) best = std::max(best, pooled.at(ch, i, j));
      out[ch * masks.size() + m] = best;
    }
  }
  return out;
}

/// Literal variant: multiply by the binary mask, then GMP over all entries.
/// Agrees with masked_grid_pool when features are nonnegative.
inline Tensor masked_grid_pool_multiply(const Tensor& fmap, const Roi& roi, const GridMaskSpec& spec) {
  spec.validate();
  require_aligned_roi(fmap.shape(), roi, spec);
  const Tensor pooled = roi_max_pool(fmap, roi, spec.n_prime);
  const auto masks = grid_masks(spec);
  const std::size_t c = fmap.dim(0), np = spec.n_prime;
  Tensor out({c, spec.n, spec.n});
  for (std::size_t m = 0; m < masks.size(); ++m) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j) best = std::max(best, pooled.at(ch, i, j) * masks[m].at(i, j));
      out[ch * masks.size() + m] = best;
    }
  }
  return out;
}

}  // namespace mwn
