#pragma once

// Greedy NMS and PASCAL-style average precision at a fixed IoU threshold.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mwn/toy/scene.hpp"

namespace mwn::toy {

struct Detection {
  std::size_t scene = 0;
  std::size_t label = 0;
  double score = 0.0;
  Box box;
};

/// Keeps detections in descending score order, dropping any whose IoU with
/// an already kept one exceeds `threshold`. Ties keep the earlier input.
inline std::vector<Detection> nms(std::vector<Detection> dets, double threshold) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.box, d.box) > threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

/// All-point interpolated AP for one class. `ground_truth[s]` lists the boxes
/// of that class in scene s. Returns 0 when the class has no ground truth.
inline double average_precision(std::vector<Detection> dets, const std::vector<std::vector<Box>>& ground_truth,
                                double iou_threshold = 0.5) {
  std::size_t total = 0;
  for (const auto& g : ground_truth) total += g.size();
  if (total == 0) return 0.0;

  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(ground_truth.size());
  for (std::size_t s = 0; s < ground_truth.size(); ++s) used[s].assign(ground_truth[s].size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& d : dets) {
    double best = 0.0;
    std::ptrdiff_t match = -1;
    if (d.scene < ground_truth.size()) {
      const auto& gts = ground_truth[d.scene];
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const double v = iou(d.box, gts[j]);
        if (v > best) {
          best = v;
          match = static_cast<std::ptrdiff_t>(j);
        }
      }
    }
    if (match >= 0 && best >= iou_threshold && !used[d.scene][static_cast<std::size_t>(match)]) {
      used[d.scene][static_cast<std::size_t>(match)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total));
  }

  // Area under the precision envelope.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Mean AP over classes that have ground truth in `scenes`.
inline double mean_average_precision(const std::vector<Detection>& dets, const std::vector<ToyScene>& scenes,
                                     double iou_threshold = 0.5) {
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::vector<Box>> gt(scenes.size());
    bool any = false;
    for (std::size_t s = 0; s < scenes.size(); ++s)
      for (const auto& o : scenes[s].objects)
        if (o.label == c) {
          gt[s].push_back(o.box);
          any = true;
        }
    if (!any) continue;
    std::vector<Detection> mine;
    std::copy_if(dets.begin(), dets.end(), std::back_inserter(mine), [c](const Detection& d) { return d.label == c; });
    sum += average_precision(std::move(mine), gt, iou_threshold);
    ++classes;
  }
  return classes ? sum / static_cast<double>(classes) : 0.0;
}

}  // namespace mwn::toy
