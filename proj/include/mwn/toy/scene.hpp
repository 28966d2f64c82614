#pragma once

// Synthetic detection scenes. Every object is a gray rectangle carrying one
// bright and one dark blob; the three classes differ only in where the blobs
// sit inside the box:
//   class 0: bright blob above, dark blob below
//   class 1: dark blob above, bright blob below
//   class 2: bright blob left, dark blob right
// Local appearance statistics are identical across classes, so an encoder
// that discards position inside the ROI cannot tell them apart reliably.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwn/random.hpp"
#include "mwn/tensor.hpp"

namespace mwn::toy {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kNumClasses = 3;
inline constexpr double kMinBoxSide = 12.0;

/// Axis-aligned box in pixel coordinates, half-open [x0, x1) x [y0, y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct SceneObject {
  std::size_t label = 0;
  Box box;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct ToyScene {
  Tensor image;  // 1 x 64 x 64, values in [0, 1]
  std::vector<SceneObject> objects;
  friend bool operator==(const ToyScene&, const ToyScene&) = default;
};

namespace detail {

inline void fill_disk(Tensor& img, double cx, double cy, double r, double value) {
  const auto n = static_cast<double>(kImageSize);
  const int y0 = static_cast<int>(std::max(0.0, std::floor(cy - r)));
  const int y1 = static_cast<int>(std::min(n, std::ceil(cy + r)));
  const int x0 = static_cast<int>(std::max(0.0, std::floor(cx - r)));
  const int x1 = static_cast<int>(std::min(n, std::ceil(cx + r)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) img.at(0, y, x) = value;
    }
}

}  // namespace detail

struct SceneConfig {
  double min_side = 20.0;
  double max_side = 36.0;
  double part_offset = 0.2;     // blob centers at this fraction from opposite box edges
  double unmarked_rate = 0.3;   // objects drawn without parts
  bool position_prior = true;   // class c centered in horizontal band c of the image
};

/// Draws one scene from `rng`; the same generator state yields the same scene.
inline ToyScene generate_scene(Rng& rng, const SceneConfig& cfg = {}) {
  ToyScene s;
  const auto n = static_cast<double>(kImageSize);
  s.image = Tensor({1, kImageSize, kImageSize});
  for (double& v : s.image.data()) v = 0.1 + 0.15 * rng.uniform();

  const int count = rng.uniform_int(1, 3);
  std::vector<bool> marked;
  int attempts = 0;
  while (static_cast<int>(s.objects.size()) < count && attempts++ < 200) {
    const auto label = static_cast<std::size_t>(rng.below(kNumClasses));
    const double w = std::floor(rng.uniform(cfg.min_side, cfg.max_side + 1.0));
    const double h = std::floor(rng.uniform(cfg.min_side, cfg.max_side + 1.0));
    const double x0 = std::floor(rng.uniform(0.0, n - w + 1.0));
    double y0 = std::floor(rng.uniform(0.0, n - h + 1.0));
    if (cfg.position_prior) {
      const double band = n / static_cast<double>(kNumClasses);
      const double cy = (static_cast<double>(label) + rng.uniform()) * band;
      y0 = std::clamp(std::floor(cy - 0.5 * h), 0.0, n - h);
    }
    const bool is_marked = rng.uniform() >= cfg.unmarked_rate;
    const Box box{x0, y0, x0 + w, y0 + h};
    const Box grown{box.x0 - 2, box.y0 - 2, box.x1 + 2, box.y1 + 2};
    const bool clear = std::none_of(s.objects.begin(), s.objects.end(),
                                    [&](const SceneObject& o) { return iou(grown, o.box) > 0.0; });
    if (!clear) continue;
    s.objects.push_back({label, box});
    marked.push_back(is_marked);
  }

  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    const Box& b = o.box;
    for (auto y = static_cast<std::size_t>(b.y0); y < static_cast<std::size_t>(b.y1); ++y)
      for (auto x = static_cast<std::size_t>(b.x0); x < static_cast<std::size_t>(b.x1); ++x)
        s.image.at(0, y, x) = 0.45 + 0.1 * rng.uniform();
    if (!marked[i]) continue;
    const double cx = 0.5 * (b.x0 + b.x1), cy = 0.5 * (b.y0 + b.y1);
    const double r = 0.12 * std::min(b.width(), b.height()) + 1.0;
    const double near = cfg.part_offset, far = 1.0 - cfg.part_offset;
    double bx = cx, by = cy, dx = cx, dy = cy;
    switch (o.label) {
      case 0: by = b.y0 + near * b.height(); dy = b.y0 + far * b.height(); break;
      case 1: by = b.y0 + far * b.height(); dy = b.y0 + near * b.height(); break;
      default: bx = b.x0 + near * b.width(); dx = b.x0 + far * b.width(); break;
    }
    detail::fill_disk(s.image, bx, by, r, 0.95);
    detail::fill_disk(s.image, dx, dy, r, 0.0);
  }
  return s;
}

/// Scene `index` of the stream identified by `seed`.
inline ToyScene scene_at(std::uint64_t seed, std::uint64_t index, const SceneConfig& cfg = {}) {
  Rng rng = Rng::derive(seed, index);
  return generate_scene(rng, cfg);
}

/// Binary PGM (P5) writer for 8-bit gray images.
inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<unsigned char>& pixels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline std::vector<unsigned char> to_gray8(const Tensor& image) {
  std::vector<unsigned char> px(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    px[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  return px;
}

/// Writes scenes [0, count) as scene_NNNNN.pgm plus boxes.txt with lines
/// `scene_index class x0 y0 x1 y1`.
inline void dump_scenes(const std::filesystem::path& dir, std::uint64_t seed, std::size_t count,
                        const SceneConfig& cfg = {}) {
  std::filesystem::create_directories(dir);
  std::ofstream boxes(dir / "boxes.txt");
  if (!boxes) throw std::runtime_error("cannot write to '" + dir.string() + "'");
  for (std::size_t i = 0; i < count; ++i) {
    const ToyScene s = scene_at(seed, i, cfg);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.pgm", i);
    write_pgm(dir / name, kImageSize, kImageSize, to_gray8(s.image));
    for (const auto& o : s.objects) {
      boxes << i << ' ' << o.label << ' ' << o.box.x0 << ' ' << o.box.y0 << ' ' << o.box.x1 << ' ' << o.box.y1
            << '\n';
    }
  }
}

}  // namespace mwn::toy
