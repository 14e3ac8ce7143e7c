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

// Coherent generative augmentation: paste OOD object masks into a training
// label map, render a new image from the pasted map and a text prompt, and
// filter failed generations with a box-prompted segmentation oracle plus an
// uncertainty gate. Also hosts the rule-based augmentation baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"
#include "segshift/netpbm.hpp"
#include "segshift/places.hpp"
#include "segshift/rng.hpp"
#include "segshift/toy_world.hpp"

namespace segshift {

// ---------------------------------------------------------------------------
// Prompts

struct PromptSpec {
  std::string place;
  Weather weather = Weather::clear;
  TimeOfDay time = TimeOfDay::day;
  std::optional<std::string> ood_class;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

inline constexpr std::string_view kPromptPrefix =
    "An image sampled from various stereo video sequences taken by dash cam in ";

inline std::string render_prompt(const PromptSpec& spec) {
  std::string out(kPromptPrefix);
  out += spec.place;
  out += " in a ";
  out += to_string(spec.weather);
  out += " ";
  out += to_string(spec.time);
  if (spec.ood_class) out += " There is a " + *spec.ood_class + " accidentally staying on the road.";
  return out;
}

/// Inverse of render_prompt; nullopt when the text does not follow the template.
inline std::optional<PromptSpec> parse_prompt(std::string_view text) {
  if (!text.starts_with(kPromptPrefix)) return std::nullopt;
  text.remove_prefix(kPromptPrefix.size());
  PromptSpec spec;
  std::string_view rest = text;
  constexpr std::string_view kOodLead = " There is a ";
  constexpr std::string_view kOodTail = " accidentally staying on the road.";
  if (const auto k = rest.find(kOodLead); k != std::string_view::npos) {
    auto ood = rest.substr(k + kOodLead.size());
    if (!ood.ends_with(kOodTail)) return std::nullopt;
    ood.remove_suffix(kOodTail.size());
    spec.ood_class = std::string(ood);
    rest = rest.substr(0, k);
  }
  const auto in_a = rest.rfind(" in a ");
  if (in_a == std::string_view::npos) return std::nullopt;
  spec.place = std::string(rest.substr(0, in_a));
  const auto cond = rest.substr(in_a + 6);
  const auto sp = cond.find(' ');
  if (sp == std::string_view::npos) return std::nullopt;
  try {
    spec.weather = weather_from_string(cond.substr(0, sp));
    spec.time = time_from_string(cond.substr(sp + 1));
  } catch (const ValidationError&) {
    return std::nullopt;
  }
  return spec;
}

inline PromptSpec sample_prompt(Rng& rng) {
  PromptSpec spec;
  spec.place = std::string(kPlaces[rng.below(kPlaces.size())]);
  spec.weather = kAllWeather[rng.below(kAllWeather.size())];
  spec.time = kAllTimes[rng.below(kAllTimes.size())];
  return spec;
}

// ---------------------------------------------------------------------------
// Pasting

/// Sets every pixel under the object footprint to the OOD label (ignore
/// pixels included); everything else is unchanged.
inline LabelMap paste_ood_mask(const LabelMap& label, const OodObjectMask& obj, const LabelSpace& space) {
  if (obj.anchor_row < 0 || obj.anchor_col < 0 || obj.anchor_row + obj.height > label.height ||
      obj.anchor_col + obj.width > label.width)
    throw ValidationError("OOD object footprint at (" + std::to_string(obj.anchor_row) + ", " +
                          std::to_string(obj.anchor_col) + ") falls outside the label map");
  LabelMap out = label;
  for (int y = 0; y < obj.height; ++y)
    for (int x = 0; x < obj.width; ++x)
      if (obj.mask[static_cast<std::size_t>(y) * obj.width + x])
        out.at(obj.anchor_row + y, obj.anchor_col + x) = static_cast<std::uint8_t>(space.ood_id());
  return out;
}

struct Box {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  std::size_t area() const { return static_cast<std::size_t>(height) * width; }
  friend bool operator==(const Box&, const Box&) = default;
};

inline Box footprint_box(const OodObjectMask& obj) {
  int r0 = obj.height, r1 = -1, c0 = obj.width, c1 = -1;
  for (int y = 0; y < obj.height; ++y)
    for (int x = 0; x < obj.width; ++x)
      if (obj.mask[static_cast<std::size_t>(y) * obj.width + x]) {
        r0 = std::min(r0, y); r1 = std::max(r1, y);
        c0 = std::min(c0, x); c1 = std::max(c1, x);
      }
  if (r1 < 0) throw ValidationError("OOD object mask is empty");
  return {obj.anchor_row + r0, obj.anchor_col + c0, r1 - r0 + 1, c1 - c0 + 1};
}

// ---------------------------------------------------------------------------
// Generators

/// Semantic-map-to-image generator seam. Real diffusion models plug in here.
class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual std::string_view name() const = 0;
  virtual Image generate(const LabelMap& y_aug, std::string_view prompt, std::uint64_t seed) const = 0;
};

/// Renders each known class with its palette texture, OOD regions with an
/// out-of-palette texture, then applies the weather/time transform named in
/// the prompt. With probability failure_rate the OOD region is rendered as
/// its surround instead (the object "blends in").
class SyntheticBackend final : public GeneratorBackend {
 public:
  SyntheticBackend(const ToyWorldConfig& world, double failure_rate)
      : world_(world), palette_(world), space_(world.label_space()), failure_rate_(failure_rate) {
    if (!(failure_rate >= 0.0 && failure_rate <= 1.0))
      throw ValidationError("failure rate must lie in [0, 1]");
  }

  std::string_view name() const override { return "synthetic"; }

  /// Whether generation with this seed fails.
  bool fails(std::uint64_t seed) const {
    Rng rng(seed);
    return rng.bernoulli(failure_rate_);
  }

  /// Clear/day rendering (no appearance transform).
  Image render_base(const LabelMap& y_aug, std::uint64_t seed) const {
    Rng rng(seed);
    const bool fail = rng.bernoulli(failure_rate_);
    const LabelMap drawn = fail ? fill_ood_with_surround(y_aug, space_) : y_aug;
    const Texture ood = palette_.sample_ood_texture(rng);
    Image img = render_labels(drawn, palette_, space_, ood, rng);
    noise_state_ = rng.next_u64();
    return img;
  }

  Image generate(const LabelMap& y_aug, std::string_view prompt, std::uint64_t seed) const override {
    const auto spec = parse_prompt(prompt).value_or(PromptSpec{});
    Image img = render_base(y_aug, seed);
    Rng rng(noise_state_);
    apply_covariate(img, spec.weather, spec.time, world_.strengths, rng);
    netpbm::quantize_in_place(img);
    return img;
  }

  const Palette& palette() const { return palette_; }

 private:
  ToyWorldConfig world_;
  Palette palette_;
  LabelSpace space_;
  double failure_rate_;
  mutable std::uint64_t noise_state_ = 0;
};

inline std::unique_ptr<GeneratorBackend> make_backend(std::string_view name, const ToyWorldConfig& world,
                                                      double failure_rate) {
  if (name == "synthetic") return std::make_unique<SyntheticBackend>(world, failure_rate);
  throw ValidationError("unknown generator backend '" + std::string(name) + "' (known: synthetic)");
}

/// x_aug = G(y_aug, t).
inline SegSample generate(const LabelMap& y_aug, std::string_view prompt, const GeneratorBackend& backend,
                          std::uint64_t seed, std::string id = {}) {
  return SegSample{std::move(id), backend.generate(y_aug, prompt, seed), y_aug};
}

// ---------------------------------------------------------------------------
// Auto-filtering

/// Box-prompted segmenter seam (a promptable foundation model in practice).
/// Returns a box-local mask (row-major, box.height x box.width).
class SegmentationOracle {
 public:
  virtual ~SegmentationOracle() = default;
  virtual std::vector<std::uint8_t> segment(const SegSample& sample, const Box& box) const = 0;
};

/// Returns the pasted mask itself, with each boundary pixel dropped with
/// probability `erosion`.
class PerfectOracle final : public SegmentationOracle {
 public:
  explicit PerfectOracle(double erosion = 0.0, std::uint64_t seed = 0) : erosion_(erosion), seed_(seed) {}

  std::vector<std::uint8_t> segment(const SegSample& s, const Box& box) const override {
    std::vector<std::uint8_t> m(box.area(), 0);
    const auto ood = [&](int y, int x) {
      return y >= 0 && x >= 0 && y < s.label.height && x < s.label.width && s.label.at(y, x) == kOodId;
    };
    Rng rng(derive_seed(seed_, fnv1a(s.id), static_cast<std::uint64_t>(box.row * 4099 + box.col)));
    for (int y = 0; y < box.height; ++y)
      for (int x = 0; x < box.width; ++x) {
        const int gy = box.row + y, gx = box.col + x;
        if (!ood(gy, gx)) continue;
        const bool boundary = !ood(gy - 1, gx) || !ood(gy + 1, gx) || !ood(gy, gx - 1) || !ood(gy, gx + 1);
        const bool drop = boundary && erosion_ > 0.0 && rng.bernoulli(erosion_);
        m[static_cast<std::size_t>(y) * box.width + x] = drop ? 0 : 1;
      }
    return m;
  }

 private:
  double erosion_;
  std::uint64_t seed_;
};

namespace detail {

inline Image box_blur3(const Image& img) {
  Image out(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double s = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= img.height || xx >= img.width) continue;
            s += img.at(c, yy, xx);
            ++n;
          }
        out.at(c, y, x) = s / n;
      }
  return out;
}

inline double color_dist(const Image& a, std::size_t p, const Image& b, std::size_t q) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = a.at(c, p) - b.at(c, q);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

/// Image-based box-prompted segmenter: a pixel inside the box is foreground
/// when its (3x3-smoothed) colour is far from every colour on the ring just
/// outside the box. Distances are normalised by the image's colour contrast
/// so dim or foggy scenes behave like clear ones.
class AppearanceOracle final : public SegmentationOracle {
 public:
  explicit AppearanceOracle(double threshold = 0.6, int pad = 2) : threshold_(threshold), pad_(pad) {}

  std::vector<std::uint8_t> segment(const SegSample& s, const Box& box) const override {
    const Image& img = s.image;
    const Image sm = detail::box_blur3(img);
    double contrast = 0.0;
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t p = 0; p < sm.pixels(); ++p) mean += sm.at(c, p);
      mean /= static_cast<double>(sm.pixels());
      for (std::size_t p = 0; p < sm.pixels(); ++p) sq += (sm.at(c, p) - mean) * (sm.at(c, p) - mean);
      contrast += std::sqrt(sq / static_cast<double>(sm.pixels())) / 3.0;
    }
    contrast = std::max(contrast, 1e-3);
    std::vector<std::size_t> ring;
    const int r0 = std::max(0, box.row - pad_), r1 = std::min(img.height, box.row + box.height + pad_);
    const int c0 = std::max(0, box.col - pad_), c1 = std::min(img.width, box.col + box.width + pad_);
    for (int y = r0; y < r1; ++y)
      for (int x = c0; x < c1; ++x) {
        const bool inside = y >= box.row && y < box.row + box.height && x >= box.col && x < box.col + box.width;
        if (!inside) ring.push_back(static_cast<std::size_t>(y) * img.width + x);
      }
    if (ring.empty()) throw Error("appearance oracle: box leaves no surrounding context");
    std::vector<std::uint8_t> m(box.area(), 0);
    for (int y = 0; y < box.height; ++y)
      for (int x = 0; x < box.width; ++x) {
        const std::size_t p = static_cast<std::size_t>(box.row + y) * img.width + box.col + x;
        double best = 1e9;
        for (auto q : ring) best = std::min(best, detail::color_dist(sm, p, sm, q));
        m[static_cast<std::size_t>(y) * box.width + x] = best / contrast > threshold_;
      }
    return m;
  }

 private:
  double threshold_;
  int pad_;
};

/// Per-pixel anomaly scores (higher = more anomalous) from a pretrained
/// model or any stand-in.
class UncertaintyScorer {
 public:
  virtual ~UncertaintyScorer() = default;
  virtual std::vector<double> anomaly_scores(const Image& image) const = 0;
};

/// Distance of the smoothed pixel colour to the nearest known-class base
/// colour under clear/day rendering.
class PaletteNoveltyScorer final : public UncertaintyScorer {
 public:
  explicit PaletteNoveltyScorer(const Palette& palette) : palette_(palette) {}

  std::vector<double> anomaly_scores(const Image& image) const override {
    const Image sm = detail::box_blur3(image);
    std::vector<double> out(image.pixels());
    for (std::size_t p = 0; p < image.pixels(); ++p) {
      double best = 1e9;
      for (int k = 0; k < palette_.num_classes(); ++k) {
        const auto& b = palette_.class_texture(k).base;
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += (sm.at(c, p) - b[c]) * (sm.at(c, p) - b[c]);
        best = std::min(best, std::sqrt(s));
      }
      out[p] = best;
    }
    return out;
  }

 private:
  Palette palette_;
};

struct FilterVerdict {
  bool keep = false;
  double iou_vs_oracle = 0.0;
  double uncertainty_percentile = 0.0;
  std::optional<std::vector<std::uint8_t>> revised_mask;  // box-local, on keep
  std::string diagnostic;
};

struct FilterThresholds {
  double iou = 0.7;
  double uncertainty_pct = 10.0;
};

/// Checks one pasted object: IoU of the oracle's box segmentation against
/// the pasted mask, and the percentile of the object's mean anomaly score
/// among the image's known-class pixel scores.
inline FilterVerdict auto_filter(const SegSample& sample, const Box& box, const SegmentationOracle& oracle,
                                 const UncertaintyScorer& scorer, const FilterThresholds& thr = {}) {
  FilterVerdict v;
  std::vector<std::uint8_t> seg;
  try {
    seg = oracle.segment(sample, box);
  } catch (const std::exception& e) {
    v.diagnostic = std::string("oracle failure: ") + e.what();
    return v;
  }
  if (seg.size() != box.area()) {
    v.diagnostic = "oracle returned a mask of the wrong size";
    return v;
  }
  std::size_t inter = 0, uni = 0;
  for (int y = 0; y < box.height; ++y)
    for (int x = 0; x < box.width; ++x) {
      const bool a = sample.label.at(box.row + y, box.col + x) == kOodId;
      const bool b = seg[static_cast<std::size_t>(y) * box.width + x] != 0;
      inter += a && b;
      uni += a || b;
    }
  v.iou_vs_oracle = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;

  const auto scores = scorer.anomaly_scores(sample.image);
  double region = 0.0;
  std::size_t region_n = 0;
  for (int y = 0; y < box.height; ++y)
    for (int x = 0; x < box.width; ++x)
      if (sample.label.at(box.row + y, box.col + x) == kOodId) {
        region += scores[static_cast<std::size_t>(box.row + y) * sample.image.width + box.col + x];
        ++region_n;
      }
  region = region_n ? region / static_cast<double>(region_n) : 0.0;
  double below = 0.0;
  std::size_t inliers = 0;
  for (std::size_t p = 0; p < sample.label.pixels(); ++p) {
    const int l = sample.label.data[p];
    if (l == kOodId || l == kIgnoreId) continue;
    ++inliers;
    if (scores[p] < region) below += 1.0;
    else if (scores[p] == region) below += 0.5;
  }
  v.uncertainty_percentile = inliers ? 100.0 * below / static_cast<double>(inliers) : 100.0;

  v.keep = v.iou_vs_oracle >= thr.iou && v.uncertainty_percentile >= thr.uncertainty_pct;
  if (v.keep) v.revised_mask = std::move(seg);
  else if (v.iou_vs_oracle < thr.iou) v.diagnostic = "low IoU against oracle segmentation";
  else v.diagnostic = "object uncertainty below the inlier percentile gate";
  return v;
}

/// Replaces the pasted mask inside the box by the oracle's revision: pasted
/// pixels the oracle rejects become ignore, oracle pixels become OOD.
inline void apply_revised_mask(LabelMap& label, const Box& box, const std::vector<std::uint8_t>& revised) {
  for (int y = 0; y < box.height; ++y)
    for (int x = 0; x < box.width; ++x) {
      auto& v = label.at(box.row + y, box.col + x);
      const bool keep = revised[static_cast<std::size_t>(y) * box.width + x] != 0;
      if (keep) v = static_cast<std::uint8_t>(kOodId);
      else if (v == kOodId) v = static_cast<std::uint8_t>(kIgnoreId);
    }
}

/// Relabels rectangular patches of known pixels to a wrong class until
/// exactly round(rate * |known|) pixels are corrupted. Returns the number
/// of corrupted pixels.
inline std::size_t corrupt_labels(LabelMap& label, double rate, const LabelSpace& space, Rng& rng) {
  std::size_t known = 0;
  for (auto v : label.data) known += space.is_known(v);
  const auto target = static_cast<std::size_t>(std::llround(rate * static_cast<double>(known)));
  std::vector<std::uint8_t> touched(label.pixels(), 0);
  std::size_t done = 0;
  int guard = 0;
  while (done < target && guard++ < 10000) {
    const int ph = rng.range(2, std::max(2, label.height / 4));
    const int pw = rng.range(2, std::max(2, label.width / 4));
    const int r = rng.range(0, label.height - ph);
    const int c = rng.range(0, label.width - pw);
    const int shift = rng.range(1, space.num_known() - 1);
    for (int y = r; y < r + ph && done < target; ++y)
      for (int x = c; x < c + pw && done < target; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * label.width + x;
        if (touched[p] || !space.is_known(label.data[p])) continue;
        label.data[p] = static_cast<std::uint8_t>((label.data[p] + shift) % space.num_known());
        touched[p] = 1;
        ++done;
      }
  }
  return done;
}

// ---------------------------------------------------------------------------
// Paste, generate, filter, regenerate

struct AugmentationOptions {
  int objects_per_image = 1;
  int max_retries = 3;  // regenerations after the first attempt
  FilterThresholds thresholds;
};

struct ObjectRecord {
  std::string class_name;
  Box box;
  bool keep = false;
  double iou = 0.0;
  double percentile = 0.0;
  std::string diagnostic;
};

struct AugmentationOutcome {
  SegSample sample;  // last attempt; labels carry the revised masks on keep
  PromptSpec prompt;
  bool keep = false;
  int regenerations = 0;
  std::vector<ObjectRecord> objects;  // verdicts of the last attempt
};

/// Pastes OOD objects into the original label map, renders it under a random
/// prompt and filters every object; the image is regenerated (new generator
/// seed, same label map and prompt) until all objects pass or the retry
/// budget is spent. Fully determined by `seed`.
inline AugmentationOutcome augment_sample(const SegSample& original, const ToyWorldConfig& world,
                                          const GeneratorBackend& backend, const SegmentationOracle& oracle,
                                          const UncertaintyScorer& scorer, const AugmentationOptions& opt,
                                          std::uint64_t seed, std::string id) {
  if (opt.objects_per_image < 1) throw ValidationError("objects_per_image must be >= 1");
  if (opt.max_retries < 0) throw ValidationError("max_retries must be >= 0");
  const LabelSpace space = world.label_space();
  Rng rng(seed);
  AugmentationOutcome out;
  out.prompt = sample_prompt(rng);
  const auto area = static_cast<std::size_t>(
      std::max(1L, std::lround(world.ood_rate * original.label.height * original.label.width)));
  LabelMap y_aug = original.label;
  std::vector<Box> boxes;
  for (int k = 0; k < opt.objects_per_image; ++k) {
    const auto family = world.ood_shapes[rng.below(world.ood_shapes.size())];
    OodObjectMask obj = make_ood_object(family, area, rng);
    Box box;
    for (int tries = 0; tries < 20; ++tries) {
      place_on_road(obj, y_aug.height, y_aug.width, rng);
      box = footprint_box(obj);
      const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) {
        return box.row < b.row + b.height && b.row < box.row + box.height && box.col < b.col + b.width &&
               b.col < box.col + box.width;
      });
      if (!clash) break;
    }
    y_aug = paste_ood_mask(y_aug, obj, space);
    boxes.push_back(box);
    out.objects.push_back({obj.class_name, box, false, 0.0, 0.0, {}});
    if (!out.prompt.ood_class) out.prompt.ood_class = obj.class_name;
  }
  const std::string prompt = render_prompt(out.prompt);
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    out.regenerations = attempt;
    out.sample = generate(y_aug, prompt, backend, derive_seed(seed, 0x6e6, static_cast<std::uint64_t>(attempt)), id);
    std::vector<FilterVerdict> verdicts;
    bool all = true;
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      verdicts.push_back(auto_filter(out.sample, boxes[k], oracle, scorer, opt.thresholds));
      auto& rec = out.objects[k];
      rec.keep = verdicts.back().keep;
      rec.iou = verdicts.back().iou_vs_oracle;
      rec.percentile = verdicts.back().uncertainty_percentile;
      rec.diagnostic = verdicts.back().diagnostic;
      all = all && rec.keep;
    }
    if (all) {
      for (std::size_t k = 0; k < boxes.size(); ++k) apply_revised_mask(out.sample.label, boxes[k], *verdicts[k].revised_mask);
      out.keep = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rule-based augmentation baseline

/// Application probability of each transform.
struct RuleAugConfig {
  double color_jitter = 0.5;
  double blur = 0.5;
  double sharpness = 0.5;
  double contrast = 0.5;
  double equalize = 0.5;
  double resize = 0.5;
  double rotation = 0.5;
  double hflip = 0.75;
  double crop = 1.0;
};

namespace detail {

inline void gaussian_blur(Image& img, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-i * i / (2 * sigma * sigma));
  for (auto& v : k) v /= s;
  Image tmp = img;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * img.at(c, y, std::clamp(x + i, 0, img.width - 1));
        tmp.at(c, y, x) = acc;
      }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(c, std::clamp(y + i, 0, img.height - 1), x);
        img.at(c, y, x) = acc;
      }
}

inline void equalize(Image& img) {
  for (int c = 0; c < 3; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t p = 0; p < img.pixels(); ++p) ++hist[netpbm::quantize(img.at(c, p))];
    std::array<double, 256> cdf{};
    std::size_t run = 0;
    for (int b = 0; b < 256; ++b) {
      run += hist[b];
      cdf[b] = static_cast<double>(run) / static_cast<double>(img.pixels());
    }
    for (std::size_t p = 0; p < img.pixels(); ++p) img.at(c, p) = cdf[netpbm::quantize(img.at(c, p))];
  }
}

}  // namespace detail

/// Mirrors image and labels left-right.
inline SegSample hflip(const SegSample& s) {
  SegSample out = s;
  for (int y = 0; y < s.label.height; ++y)
    for (int x = 0; x < s.label.width; ++x) {
      const int mx = s.label.width - 1 - x;
      out.label.at(y, x) = s.label.at(y, mx);
      for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = s.image.at(c, y, mx);
    }
  return out;
}

/// Photometric and geometric transforms, each with its own probability.
/// Geometry (resize, rotation, crop) is one inverse-mapped resample: image
/// bilinear, labels nearest, out-of-frame pixels become ignore.
inline SegSample rule_augment(const SegSample& sample, std::uint64_t seed, const RuleAugConfig& cfg = {}) {
  Rng rng(seed);
  SegSample s = sample;
  Image& img = s.image;
  // photometric
  if (rng.bernoulli(cfg.color_jitter)) {
    const double bright = rng.uniform(0.6, 1.4), sat = rng.uniform(0.6, 1.4);
    for (std::size_t p = 0; p < img.pixels(); ++p) {
      const double g = (img.at(0, p) + img.at(1, p) + img.at(2, p)) / 3.0;
      for (int c = 0; c < 3; ++c) img.at(c, p) = std::clamp((g + sat * (img.at(c, p) - g)) * bright, 0.0, 1.0);
    }
  }
  if (rng.bernoulli(cfg.blur)) detail::gaussian_blur(img, rng.uniform(0.1, 1.5));
  if (rng.bernoulli(cfg.sharpness)) {
    const double k = rng.uniform(0.5, 2.0);
    const Image sm = detail::box_blur3(img);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = std::clamp(img.data[i] + k * (img.data[i] - sm.data[i]), 0.0, 1.0);
  }
  if (rng.bernoulli(cfg.contrast)) {
    const double f = rng.uniform(0.6, 1.4);
    double mean = 0.0;
    for (double v : img.data) mean += v;
    mean /= static_cast<double>(img.data.size());
    for (double& v : img.data) v = std::clamp(mean + f * (v - mean), 0.0, 1.0);
  }
  if (rng.bernoulli(cfg.equalize)) detail::equalize(img);

  // geometric
  const bool do_resize = rng.bernoulli(cfg.resize);
  const double scale = do_resize ? rng.uniform(0.75, 1.25) : 1.0;
  const bool do_rot = rng.bernoulli(cfg.rotation);
  const double angle = do_rot ? rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0 : 0.0;
  const bool do_flip = rng.bernoulli(cfg.hflip);
  const bool do_crop = rng.bernoulli(cfg.crop);
  const double crop = do_crop ? rng.uniform(0.8, 1.0) : 1.0;
  const double off_y = do_crop ? rng.uniform(0.0, 1.0 - crop) : 0.0;
  const double off_x = do_crop ? rng.uniform(0.0, 1.0 - crop) : 0.0;

  if (do_resize || do_rot || do_crop) {
    const int H = s.label.height, W = s.label.width;
    const SegSample src = s;
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // output -> crop window -> unrotate/unscale about the centre
        const double wy = off_y * H + y * crop, wx = off_x * W + x * crop;
        const double dy = (wy - cy) / scale, dx = (wx - cx) / scale;
        const double sy = cy + ca * dy - sa * dx, sx = cx + sa * dy + ca * dx;
        const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
        const bool inside = ny >= 0 && nx >= 0 && ny < H && nx < W;
        s.label.at(y, x) = inside ? src.label.at(ny, nx) : static_cast<std::uint8_t>(kIgnoreId);
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) {
            const int yy = y0 + (k >> 1), xx = x0 + (k & 1);
            const double w = ((k >> 1) ? fy : 1 - fy) * ((k & 1) ? fx : 1 - fx);
            if (w == 0.0 || yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
            acc += w * src.image.at(c, yy, xx);
          }
          s.image.at(c, y, x) = acc;
        }
      }
  }
  if (do_flip) s = hflip(s);
  return s;
}

}  // namespace segshift
