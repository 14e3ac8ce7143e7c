// Copyright 2026 The segshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Pixel-level anomaly metrics (AUROC, AP, FPR95) and known-class
// segmentation metrics (mIoU, mAcc).
//
// All anomaly metrics consume scores where higher means more anomalous.
// Thresholds are taken at observed score values only; tied scores form a
// single threshold group.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"

namespace segshift {

struct ScoredPixels {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 1 = semantic-shift pixel

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }
  std::size_t negatives() const { return labels.size() - positives(); }

  void validate() const {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    if (scores.empty()) throw UndefinedMetricError("no scored pixels");
    for (auto l : labels)
      if (l > 1) throw ValidationError("anomaly labels must be 0 or 1");
    for (double s : scores)
      if (std::isnan(s)) throw ValidationError("NaN anomaly score");
  }
};

namespace detail {

/// Indices sorted by descending score (index ascending within ties).
inline std::vector<std::size_t> order_desc(const std::vector<double>& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

struct ThresholdPoint {
  std::size_t tp = 0;
  std::size_t fp = 0;
};

/// Cumulative (tp, fp) after each distinct-threshold group, descending.
inline std::vector<ThresholdPoint> threshold_curve(const ScoredPixels& sp) {
  const auto idx = order_desc(sp.scores);
  std::vector<ThresholdPoint> curve;
  ThresholdPoint cur;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (sp.labels[idx[k]]) ++cur.tp; else ++cur.fp;
    if (k + 1 == idx.size() || sp.scores[idx[k + 1]] != sp.scores[idx[k]]) curve.push_back(cur);
  }
  return curve;
}

}  // namespace detail

/// Rank-based (Mann-Whitney) AUROC with ties counted half.
inline double auroc(const ScoredPixels& sp) {
  sp.validate();
  const double np = static_cast<double>(sp.positives());
  const double nn = static_cast<double>(sp.negatives());
  if (np == 0 || nn == 0) throw UndefinedMetricError("AUROC needs both positive and negative pixels");
  std::vector<std::size_t> idx(sp.scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return sp.scores[a] < sp.scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of positives; ranks are halves, so
  // twice the sum stays integral.
  double twice_rank_sum = 0.0;
  std::size_t k = 0;
  while (k < idx.size()) {
    std::size_t j = k;
    while (j + 1 < idx.size() && sp.scores[idx[j + 1]] == sp.scores[idx[k]]) ++j;
    const double twice_avg = static_cast<double>(k + 1 + j + 1);
    for (std::size_t t = k; t <= j; ++t)
      if (sp.labels[idx[t]]) twice_rank_sum += twice_avg;
    k = j + 1;
  }
  const double u = twice_rank_sum / 2.0 - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

/// Average precision: sum over threshold groups of (recall increment) x
/// precision, i.e. step-wise, no interpolation.
inline double average_precision(const ScoredPixels& sp) {
  sp.validate();
  const double np = static_cast<double>(sp.positives());
  if (np == 0) throw UndefinedMetricError("AP needs at least one positive pixel");
  double ap = 0.0;
  std::size_t prev_tp = 0;
  for (const auto& pt : detail::threshold_curve(sp)) {
    if (pt.tp != prev_tp) {
      const double precision = static_cast<double>(pt.tp) / static_cast<double>(pt.tp + pt.fp);
      ap += static_cast<double>(pt.tp - prev_tp) / np * precision;
      prev_tp = pt.tp;
    }
  }
  return ap;
}

/// False-positive rate at the strictest observed threshold whose TPR
/// (inclusive >=) reaches 95%.
inline double fpr_at_95_tpr(const ScoredPixels& sp) {
  sp.validate();
  const std::size_t np = sp.positives();
  const std::size_t nn = sp.negatives();
  if (np == 0 || nn == 0) throw UndefinedMetricError("FPR95 needs both positive and negative pixels");
  for (const auto& pt : detail::threshold_curve(sp)) {
    // tp / np >= 0.95 in exact integer arithmetic
    if (pt.tp * 100 >= np * 95) return static_cast<double>(pt.fp) / static_cast<double>(nn);
  }
  return 1.0;  // unreachable: the last group has tp == np
}

struct SegmentationScores {
  double miou = 0.0;
  double macc = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class_iou;     // NaN for classes absent from pred and gt
  std::vector<double> per_class_recall;  // NaN for classes absent from gt
};

/// Accumulates a C x C confusion matrix (rows = ground truth) over known-class
/// ground-truth pixels. Predictions outside [0, C) count as misses.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(const LabelSpace& space)
      : space_(space), c_(space.num_known()), m_(static_cast<std::size_t>(c_ * c_), 0),
        missed_(static_cast<std::size_t>(c_), 0) {}

  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) throw ValidationError("prediction and ground truth differ in size");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!space_.is_known(gt[i])) continue;
      if (space_.is_known(pred[i])) ++m_[static_cast<std::size_t>(gt[i] * c_ + pred[i])];
      else ++missed_[gt[i]];
    }
  }

  void merge(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += o.m_[i];
    for (std::size_t i = 0; i < missed_.size(); ++i) missed_[i] += o.missed_[i];
  }

  std::uint64_t at(int gt, int pred) const { return m_[static_cast<std::size_t>(gt * c_ + pred)]; }

  SegmentationScores scores() const {
    SegmentationScores s;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.per_class_iou.assign(static_cast<std::size_t>(c_), nan);
    s.per_class_recall.assign(static_cast<std::size_t>(c_), nan);
    double iou_sum = 0.0, acc_sum = 0.0;
    int iou_n = 0, acc_n = 0;
    std::uint64_t correct = 0, total = 0;
    for (int c = 0; c < c_; ++c) {
      std::uint64_t tp = at(c, c), fp = 0, fn = missed_[c];
      for (int k = 0; k < c_; ++k) {
        if (k == c) continue;
        fp += at(k, c);
        fn += at(c, k);
      }
      correct += tp;
      total += tp + fn;
      if (tp + fp + fn > 0) {
        s.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        iou_sum += s.per_class_iou[c];
        ++iou_n;
      }
      if (tp + fn > 0) {
        s.per_class_recall[c] = static_cast<double>(tp) / static_cast<double>(tp + fn);
        acc_sum += s.per_class_recall[c];
        ++acc_n;
      }
    }
    s.miou = iou_n ? iou_sum / iou_n : nan;
    s.macc = acc_n ? acc_sum / acc_n : nan;
    s.pixel_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : nan;
    return s;
  }

 private:
  LabelSpace space_;
  int c_;
  std::vector<std::uint64_t> m_;
  std::vector<std::uint64_t> missed_;
};

inline SegmentationScores miou_macc(std::span<const std::uint8_t> pred,
                                    std::span<const std::uint8_t> gt, const LabelSpace& space) {
  ConfusionMatrix cm(space);
  cm.add(pred, gt);
  return cm.scores();
}

struct MetricsReport {
  std::string regime;
  std::optional<double> auroc;
  std::optional<double> ap;
  std::optional<double> fpr95;
  double miou = 0.0;
  double macc = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class_iou;
  std::size_t pixels = 0;
  std::size_t ood_pixels = 0;
  std::size_t images = 0;

  bool all_finite() const {
    const auto fin = [](const std::optional<double>& v) { return !v || std::isfinite(*v); };
    return fin(auroc) && fin(ap) && fin(fpr95) && std::isfinite(miou) && std::isfinite(macc);
  }

  /// Flat `key=value` lines; classes absent from the split print as `nan`.
  std::string to_key_value() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "regime=" << regime << "\n";
    os << "images=" << images << "\n";
    os << "pixels=" << pixels << "\n";
    os << "ood_pixels=" << ood_pixels << "\n";
    if (auroc) os << "auroc=" << *auroc << "\n";
    if (ap) os << "ap=" << *ap << "\n";
    if (fpr95) os << "fpr95=" << *fpr95 << "\n";
    os << "miou=" << miou << "\n";
    os << "macc=" << macc << "\n";
    os << "pixel_accuracy=" << pixel_accuracy << "\n";
    for (std::size_t c = 0; c < per_class_iou.size(); ++c)
      os << "iou_class_" << c << "=" << per_class_iou[c] << "\n";
    return os.str();
  }
};

}  // namespace segshift
