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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segshift/errors.hpp"

namespace segshift {

/// On-disk label byte reserved for semantic-shift (anomalous) pixels.
inline constexpr int kOodId = 254;
/// On-disk label byte excluded from every loss and metric.
inline constexpr int kIgnoreId = 255;

/// Known classes are [0, C); the OOD and ignore labels sit outside that range.
class LabelSpace {
 public:
  explicit LabelSpace(int num_known_classes, int ood_id = kOodId, int ignore_id = kIgnoreId)
      : num_known_(num_known_classes), ood_id_(ood_id), ignore_id_(ignore_id) {
    if (num_known_ < 2) throw ValidationError("label space needs at least 2 known classes");
    if (ood_id_ == ignore_id_) throw ValidationError("ood_id and ignore_id must differ");
    if (is_known(ood_id_) || is_known(ignore_id_))
      throw ValidationError("ood_id and ignore_id must lie outside [0, C)");
    if (ood_id_ < 0 || ood_id_ > 255 || ignore_id_ < 0 || ignore_id_ > 255)
      throw ValidationError("ood_id and ignore_id must fit in one byte");
  }

  int num_known() const noexcept { return num_known_; }
  int ood_id() const noexcept { return ood_id_; }
  int ignore_id() const noexcept { return ignore_id_; }

  bool is_known(int v) const noexcept { return v >= 0 && v < num_known_; }
  bool is_ood(int v) const noexcept { return v == ood_id_; }
  bool is_ignore(int v) const noexcept { return v == ignore_id_; }
  bool contains(int v) const noexcept { return is_known(v) || is_ood(v) || is_ignore(v); }

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  int num_known_;
  int ood_id_;
  int ignore_id_;
};

/// RGB image, channel-major (3 x H x W), values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[(c * pixels()) + y * width + x]; }
  double at(int c, int y, int x) const { return data[(c * pixels()) + y * width + x]; }
  double& at(int c, std::size_t p) { return data[c * pixels() + p]; }
  double at(int c, std::size_t p) const { return data[c * pixels() + p]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel label map of raw label bytes.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t pixels() const noexcept { return data.size(); }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct SegSample {
  std::string id;
  Image image;
  LabelMap label;
};

/// An original sample coupled with its coherently augmented counterpart.
/// pair_valid marks spatial locations usable for the original/augmented
/// consistency term: both labels known and equal.
struct AugmentedPair {
  SegSample original;
  SegSample augmented;
  std::vector<std::uint8_t> pair_valid;
};

inline AugmentedPair make_augmented_pair(SegSample original, SegSample augmented,
                                         const LabelSpace& space) {
  if (original.label.height != augmented.label.height ||
      original.label.width != augmented.label.width)
    throw ValidationError("augmented pair '" + original.id + "' has mismatched spatial dims");
  AugmentedPair pair{std::move(original), std::move(augmented), {}};
  const auto& a = pair.original.label.data;
  const auto& b = pair.augmented.label.data;
  pair.pair_valid.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    pair.pair_valid[i] = space.is_known(a[i]) && space.is_known(b[i]) && a[i] == b[i];
  return pair;
}

enum class Source : std::uint8_t { original = 0, augmented = 1 };

/// Flattened pixel coordinate inside a batch of augmented pairs.
struct PixelRef {
  std::uint32_t pair = 0;
  Source source = Source::original;
  std::uint32_t pixel = 0;

  friend bool operator==(const PixelRef&, const PixelRef&) = default;
  friend auto operator<=>(const PixelRef&, const PixelRef&) = default;
};

struct IndexSets {
  std::vector<PixelRef> in_idx;   // known-class pixels of original images
  std::vector<PixelRef> aug_idx;  // known-class pixels of augmented images
  std::vector<PixelRef> out_idx;  // OOD pixels of both
};

/// Builds the inlier / augmented-inlier / outlier index sets for a batch.
/// Order is deterministic: pairs in batch order; within a pair, original
/// pixels before augmented ones; pixels ascending.
inline IndexSets build_index_sets(std::span<const AugmentedPair> batch, const LabelSpace& space) {
  IndexSets sets;
  for (std::uint32_t n = 0; n < batch.size(); ++n) {
    const auto& pair = batch[n];
    const auto scan = [&](const LabelMap& label, Source src, std::vector<PixelRef>& known) {
      for (std::uint32_t p = 0; p < label.data.size(); ++p) {
        const int v = label.data[p];
        if (space.is_known(v)) {
          known.push_back({n, src, p});
        } else if (space.is_ood(v)) {
          sets.out_idx.push_back({n, src, p});
        } else if (!space.is_ignore(v)) {
          throw ValidationError("pair " + std::to_string(n) + ": label value " +
                                std::to_string(v) + " outside the label space");
        }
      }
    };
    scan(pair.original.label, Source::original, sets.in_idx);
    scan(pair.augmented.label, Source::augmented, sets.aug_idx);
  }
  return sets;
}

struct Violation {
  enum class Kind { shape_mismatch, label_out_of_space, image_out_of_range };
  Kind kind;
  std::string message;
};

/// Reports every invariant violation of a sample (one entry per kind).
inline std::vector<Violation> validate_sample(const SegSample& sample, const LabelSpace& space) {
  std::vector<Violation> out;
  const auto& img = sample.image;
  const auto& lab = sample.label;
  if (img.height != lab.height || img.width != lab.width ||
      img.data.size() != 3 * img.pixels() || lab.data.size() != lab.pixels() ||
      lab.data.size() != static_cast<std::size_t>(lab.height) * lab.width) {
    out.push_back({Violation::Kind::shape_mismatch,
                   "image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       " vs label " + std::to_string(lab.height) + "x" +
                       std::to_string(lab.width)});
  }
  std::size_t bad_labels = 0;
  int first_bad = 0;
  for (auto v : lab.data) {
    if (!space.contains(v)) {
      if (bad_labels++ == 0) first_bad = v;
    }
  }
  if (bad_labels > 0) {
    out.push_back({Violation::Kind::label_out_of_space,
                   std::to_string(bad_labels) + " label pixel(s) outside the label space (first: " +
                       std::to_string(first_bad) + ")"});
  }
  std::size_t bad_pixels = 0;
  for (double v : img.data) {
    if (!(v >= 0.0 && v <= 1.0)) ++bad_pixels;
  }
  if (bad_pixels > 0) {
    out.push_back({Violation::Kind::image_out_of_range,
                   std::to_string(bad_pixels) + " image value(s) outside [0, 1]"});
  }
  return out;
}

}  // namespace segshift
