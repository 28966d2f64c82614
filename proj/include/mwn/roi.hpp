#pragma once

// ROI-level spatial operations on C x H x W feature maps. ROIs are given in
// feature-map cell coordinates as half-open rectangles [x0, x1) x [y0, y1).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mwn/tensor.hpp"

namespace mwn {

struct Roi {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  std::size_t image_index = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }

  friend bool operator==(const Roi&, const Roi&) = default;
};

struct ImageExtent {
  std::size_t width = 0;
  std::size_t height = 0;
};

enum class PoolMode { kAverage, kMax };

namespace detail {

inline void require_nonempty(const Roi& roi, const char* what) {
  if (!(std::isfinite(roi.x0) && std::isfinite(roi.y0) && std::isfinite(roi.x1) &&
        std::isfinite(roi.y1))) {
    throw InvalidArgument(std::string(what) + ": ROI has non-finite coordinates");
  }
  if (!(roi.x1 > roi.x0) || !(roi.y1 > roi.y0)) {
    throw InvalidArgument(std::string(what) + ": empty ROI");
  }
}

/// ROI clipped to [0, width] x [0, height]; rejects ROIs that vanish.
inline Roi clip_roi(const Roi& roi, double width, double height, const char* what) {
  require_nonempty(roi, what);
  Roi c = roi;
  c.x0 = std::clamp(roi.x0, 0.0, width);
  c.x1 = std::clamp(roi.x1, 0.0, width);
  c.y0 = std::clamp(roi.y0, 0.0, height);
  c.y1 = std::clamp(roi.y1, 0.0, height);
  if (!(c.x1 > c.x0) || !(c.y1 > c.y0)) {
    throw InvalidArgument(std::string(what) + ": ROI lies outside the feature map");
  }
  return c;
}

struct Bin {
  std::size_t lo;
  std::size_t hi;
};

/// Quantized bins along one axis: floor start, ceil end, never empty.
inline std::vector<Bin> axis_bins(double start, double end, std::size_t n, std::size_t extent) {
  std::vector<Bin> bins(n);
  const double len = end - start;
  const auto last = static_cast<double>(extent);
  for (std::size_t a = 0; a < n; ++a) {
    const double lo_f = std::floor(start + static_cast<double>(a) * len / static_cast<double>(n));
    const double hi_f = std::ceil(start + static_cast<double>(a + 1) * len / static_cast<double>(n));
    const auto lo = static_cast<std::size_t>(std::clamp(lo_f, 0.0, last - 1.0));
    const auto hi = static_cast<std::size_t>(std::clamp(std::max(hi_f, lo_f + 1.0), static_cast<double>(lo + 1), last));
    bins[a] = {lo, hi};
  }
  return bins;
}

struct RoiGrid {
  std::vector<Bin> rows;
  std::vector<Bin> cols;
};

inline RoiGrid roi_grid(const Shape& fmap_shape, const Roi& roi, std::size_t n, const char* what) {
  if (fmap_shape.size() != 3) throw ShapeError(std::string(what) + ": feature map must be C x H x W");
  if (n == 0) throw InvalidArgument(std::string(what) + ": output size must be >= 1");
  const auto h = fmap_shape[1], w = fmap_shape[2];
  const Roi c = clip_roi(roi, static_cast<double>(w), static_cast<double>(h), what);
  return {axis_bins(c.y0, c.y1, n, h), axis_bins(c.x0, c.x1, n, w)};
}

}  // namespace detail

/// Average ROI pooling to an n x n grid.
inline Tensor roi_avg_pool(const Tensor& fmap, const Roi& roi, std::size_t n) {
  const auto grid = detail::roi_grid(fmap.shape(), roi, n, "roi_avg_pool");
  const std::size_t c = fmap.dim(0);
  Tensor out({c, n, n});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t a = 0; a < n; ++a) {
      const auto [ylo, yhi] = grid.rows[a];
      for (std::size_t b = 0; b < n; ++b) {
        const auto [xlo, xhi] = grid.cols[b];
        double s = 0.0;
        for (std::size_t y = ylo; y < yhi; ++y)
          for (std::size_t x = xlo; x < xhi; ++x) s += fmap.at(ch, y, x);
        out.at(ch, a, b) = s / static_cast<double>((yhi - ylo) * (xhi - xlo));
      }
    }
  }
  return out;
}

/// Spreads each bin's gradient uniformly over the cells of that bin.
inline void roi_avg_pool_backward_accumulate(Tensor& grad_fmap, const Roi& roi, std::size_t n,
                                             const Tensor& grad_out) {
  const auto grid = detail::roi_grid(grad_fmap.shape(), roi, n, "roi_avg_pool_backward");
  const std::size_t c = grad_fmap.dim(0);
  if (grad_out.shape() != Shape{c, n, n}) throw ShapeError("roi_avg_pool_backward: grad_out shape mismatch");
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t a = 0; a < n; ++a) {
      const auto [ylo, yhi] = grid.rows[a];
      for (std::size_t b = 0; b < n; ++b) {
        const auto [xlo, xhi] = grid.cols[b];
        const double g = grad_out.at(ch, a, b) / static_cast<double>((yhi - ylo) * (xhi - xlo));
        for (std::size_t y = ylo; y < yhi; ++y)
          for (std::size_t x = xlo; x < xhi; ++x) grad_fmap.at(ch, y, x) += g;
      }
    }
  }
}

inline Tensor roi_avg_pool_backward(const Shape& fmap_shape, const Roi& roi, std::size_t n,
                                    const Tensor& grad_out) {
  Tensor g(fmap_shape);
  roi_avg_pool_backward_accumulate(g, roi, n, grad_out);
  return g;
}

struct RoiMaxPoolResult {
  Tensor values;                     // C x n x n
  std::vector<std::size_t> argmax;   // flat index into the H x W plane, per output entry
};

/// Max ROI pooling with the same binning as roi_avg_pool; ties resolve to
/// the smallest linear index within the plane.
inline RoiMaxPoolResult roi_max_pool_with_argmax(const Tensor& fmap, const Roi& roi, std::size_t n) {
  const auto grid = detail::roi_grid(fmap.shape(), roi, n, "roi_max_pool");
  const std::size_t c = fmap.dim(0), w = fmap.dim(2);
  RoiMaxPoolResult r{Tensor({c, n, n}), std::vector<std::size_t>(c * n * n)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t a = 0; a < n; ++a) {
      const auto [ylo, yhi] = grid.rows[a];
      for (std::size_t b = 0; b < n; ++b) {
        const auto [xlo, xhi] = grid.cols[b];
        std::size_t best = ylo * w + xlo;
        double best_v = fmap.at(ch, ylo, xlo);
        for (std::size_t y = ylo; y < yhi; ++y)
          for (std::size_t x = xlo; x < xhi; ++x) {
            if (fmap.at(ch, y, x) > best_v) {
              best_v = fmap.at(ch, y, x);
              best = y * w + x;
            }
          }
        r.values.at(ch, a, b) = best_v;
        r.argmax[(ch * n + a) * n + b] = best;
      }
    }
  }
  return r;
}

inline Tensor roi_max_pool(const Tensor& fmap, const Roi& roi, std::size_t n) {
  return roi_max_pool_with_argmax(fmap, roi, n).values;
}

inline Tensor roi_max_pool_backward(const Shape& fmap_shape, const std::vector<std::size_t>& argmax,
                                    const Tensor& grad_out) {
  Tensor g(fmap_shape);
  if (fmap_shape.size() != 3 || grad_out.rank() != 3 || grad_out.dim(0) != fmap_shape[0] ||
      argmax.size() != grad_out.size()) {
    throw ShapeError("roi_max_pool_backward: inconsistent shapes");
  }
  const std::size_t plane = fmap_shape[1] * fmap_shape[2];
  const std::size_t per_channel = grad_out.dim(1) * grad_out.dim(2);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    g[(i / per_channel) * plane + argmax[i]] += grad_out[i];
  }
  return g;
}

inline Roi full_map_roi(const Tensor& fmap) {
  fmap.require_rank(3, "full_map_roi");
  return {0.0, 0.0, static_cast<double>(fmap.dim(2)), static_cast<double>(fmap.dim(1)), 0};
}

/// Pools the whole feature map to n x n.
inline Tensor image_pool(const Tensor& fmap, std::size_t n, PoolMode mode = PoolMode::kAverage) {
  const Roi whole = full_map_roi(fmap);
  return mode == PoolMode::kAverage ? roi_avg_pool(fmap, whole, n) : roi_max_pool(fmap, whole, n);
}

/// Context map of the image (i_in inside the ROI, i_out outside) reduced to
/// n x n by exact fractional-area coverage over equal real-valued bins.
inline Tensor context_raw_mask(const Roi& roi, const ImageExtent& extent, std::size_t n, double i_in,
                               double i_out) {
  if (i_in == i_out) throw InvalidArgument("context_raw_mask: i_in must differ from i_out");
  if (n == 0) throw InvalidArgument("context_raw_mask: mask size must be >= 1");
  if (extent.width == 0 || extent.height == 0) throw InvalidArgument("context_raw_mask: empty image extent");
  const auto w = static_cast<double>(extent.width), h = static_cast<double>(extent.height);
  const Roi c = detail::clip_roi(roi, w, h, "context_raw_mask");
  const double bin_h = h / static_cast<double>(n), bin_w = w / static_cast<double>(n);

  auto overlap = [](double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  };
  Tensor mask({n, n});
  for (std::size_t a = 0; a < n; ++a) {
    const double by0 = static_cast<double>(a) * bin_h, by1 = static_cast<double>(a + 1) * bin_h;
    const double fy = overlap(by0, by1, c.y0, c.y1) / (by1 - by0);
    for (std::size_t b = 0; b < n; ++b) {
      const double bx0 = static_cast<double>(b) * bin_w, bx1 = static_cast<double>(b + 1) * bin_w;
      const double f = std::clamp(fy * overlap(bx0, bx1, c.x0, c.x1) / (bx1 - bx0), 0.0, 1.0);
      mask.at(a, b) = f * i_in + (1.0 - f) * i_out;
    }
  }
  return mask;
}

}  // namespace mwn
