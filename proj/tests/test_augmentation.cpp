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

#include <gtest/gtest.h>

#include <map>

#include "segshift/augmentation.hpp"

using namespace segshift;

namespace {

ToyWorldConfig small_world() {
  ToyWorldConfig w;
  w.height = w.width = 32;
  return w;
}

OodObjectMask square(int side, int row, int col) {
  OodObjectMask o;
  o.height = o.width = side;
  o.mask.assign(static_cast<std::size_t>(side * side), 1);
  o.class_name = "crate";
  o.anchor_row = row;
  o.anchor_col = col;
  return o;
}

std::size_t count(const LabelMap& l, int v) {
  return static_cast<std::size_t>(std::count(l.data.begin(), l.data.end(), static_cast<std::uint8_t>(v)));
}

// A scene with one object pasted on the road; returns the label map and box.
std::pair<LabelMap, Box> scene_with_object(const ToyWorldConfig& w, std::uint64_t seed) {
  Rng rng(seed);
  LabelMap l = layout_scene(w, rng);
  auto obj = make_ood_object(w.ood_shapes[rng.below(w.ood_shapes.size())],
                             static_cast<std::size_t>(w.ood_rate * w.height * w.width), rng);
  place_on_road(obj, w.height, w.width, rng);
  return {paste_ood_mask(l, obj, w.label_space()), footprint_box(obj)};
}

class EmptyOracle final : public SegmentationOracle {
 public:
  std::vector<std::uint8_t> segment(const SegSample&, const Box& b) const override {
    return std::vector<std::uint8_t>(b.area(), 0);
  }
};

class BrokenOracle final : public SegmentationOracle {
 public:
  std::vector<std::uint8_t> segment(const SegSample&, const Box&) const override {
    throw std::runtime_error("model not loaded");
  }
};

}  // namespace

TEST(Paste, CountsDisjointUnionAndIdempotence) {
  const LabelSpace space(6);
  const LabelMap road(16, 16, 0);
  const auto a = paste_ood_mask(road, square(3, 2, 2), space);
  EXPECT_EQ(count(a, kOodId), 9u);
  const auto ab = paste_ood_mask(a, square(4, 8, 8), space);
  EXPECT_EQ(count(ab, kOodId), 9u + 16u);
  EXPECT_EQ(paste_ood_mask(a, square(3, 2, 2), space).data, a.data);
}

TEST(Paste, IgnoreUnderMaskBecomesOodAndOutsideIsUntouched) {
  const LabelSpace space(6);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    LabelMap l(20, 20);
    for (auto& v : l.data) v = rng.bernoulli(0.1) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(6));
    OodObjectMask o;
    o.height = 1 + static_cast<int>(rng.below(8));
    o.width = 1 + static_cast<int>(rng.below(8));
    for (int k = 0; k < o.height * o.width; ++k) o.mask.push_back(rng.bernoulli(0.6));
    o.anchor_row = static_cast<int>(rng.below(static_cast<std::uint64_t>(21 - o.height)));
    o.anchor_col = static_cast<int>(rng.below(static_cast<std::uint64_t>(21 - o.width)));
    const auto out = paste_ood_mask(l, o, space);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        const int my = y - o.anchor_row, mx = x - o.anchor_col;
        const bool under = my >= 0 && mx >= 0 && my < o.height && mx < o.width &&
                           o.mask[static_cast<std::size_t>(my * o.width + mx)];
        EXPECT_EQ(out.at(y, x), under ? kOodId : l.at(y, x));
      }
  }
}

TEST(Paste, OutOfBoundsAnchorThrows) {
  const LabelSpace space(6);
  const LabelMap road(8, 8, 0);
  EXPECT_THROW(paste_ood_mask(road, square(3, 6, 0), space), ValidationError);
  EXPECT_THROW(paste_ood_mask(road, square(3, -1, 0), space), ValidationError);
}

TEST(Prompt, TemplateExamples) {
  PromptSpec p{"Paris", Weather::rainy, TimeOfDay::night, std::nullopt};
  const std::string base = "An image sampled from various stereo video sequences taken by dash cam in Paris in a rainy night";
  EXPECT_EQ(render_prompt(p), base);
  p.ood_class = "deer";
  EXPECT_EQ(render_prompt(p), base + " There is a deer accidentally staying on the road.");
  EXPECT_EQ(render_prompt(p), render_prompt(p));
  EXPECT_EQ(parse_prompt(render_prompt(p)), p);
  EXPECT_FALSE(parse_prompt("a photo of a road").has_value());
}

TEST(Prompt, PlaceListHasOneHundredCities) {
  EXPECT_EQ(kPlaces.size(), 100u);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const auto p = sample_prompt(rng);
    EXPECT_EQ(parse_prompt(render_prompt(p)), p);
  }
}

TEST(Generate, ClearDayIsTheBaseRendering) {
  const auto w = small_world();
  const SyntheticBackend backend(w, 0.0);
  const auto [label, box] = scene_with_object(w, 3);
  const std::string prompt = render_prompt({"Oslo", Weather::clear, TimeOfDay::day, std::nullopt});
  Image base = backend.render_base(label, 11);
  netpbm::quantize_in_place(base);
  EXPECT_EQ(backend.generate(label, prompt, 11).data, base.data);
}

TEST(Generate, DeterministicAndLabelPreserving) {
  const auto w = small_world();
  const auto backend = make_backend("synthetic", w, 0.3);
  const auto [label, box] = scene_with_object(w, 4);
  for (auto weather : kAllWeather)
    for (auto time : kAllTimes) {
      const auto prompt = render_prompt({"Lima", weather, time, std::nullopt});
      const auto a = generate(label, prompt, *backend, 5);
      const auto b = generate(label, prompt, *backend, 5);
      EXPECT_EQ(a.image.data, b.image.data);
      EXPECT_EQ(a.label.data, label.data);
    }
}

TEST(Generate, WeatherChangesAppearance) {
  const auto w = small_world();
  const SyntheticBackend backend(w, 0.0);
  const auto [label, box] = scene_with_object(w, 6);
  const auto clear = backend.generate(label, render_prompt({"Rome", Weather::clear, TimeOfDay::day, {}}), 1);
  for (auto weather : {Weather::cloudy, Weather::rainy, Weather::snowy, Weather::foggy})
    EXPECT_NE(backend.generate(label, render_prompt({"Rome", weather, TimeOfDay::day, {}}), 1).data, clear.data);
  EXPECT_NE(backend.generate(label, render_prompt({"Rome", Weather::clear, TimeOfDay::night, {}}), 1).data,
            clear.data);
}

TEST(Generate, UnknownBackendAndBadRateThrow) {
  const auto w = small_world();
  EXPECT_THROW(make_backend("diffusion", w, 0.0), ValidationError);
  EXPECT_THROW(SyntheticBackend(w, 1.5), ValidationError);
}

TEST(Generate, FailedGenerationRendersTheSurround) {
  const auto w = small_world();
  const SyntheticBackend failing(w, 1.0), clean(w, 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto [label, box] = scene_with_object(w, 100 + s);
    const auto prompt = render_prompt({"Cairo", Weather::foggy, TimeOfDay::day, {}});
    const auto filled = fill_ood_with_surround(label, w.label_space());
    EXPECT_EQ(count(filled, kOodId), 0u);
    EXPECT_EQ(failing.generate(label, prompt, s).data, clean.generate(filled, prompt, s).data);
  }
}

TEST(Filter, SelfIouKeepsAndEmptyOracleDiscards) {
  const auto w = small_world();
  const SyntheticBackend backend(w, 0.0);
  const PaletteNoveltyScorer scorer(backend.palette());
  const auto [label, box] = scene_with_object(w, 7);
  const auto sample = generate(label, render_prompt({"Kyiv", Weather::clear, TimeOfDay::day, {}}), backend, 3);
  const auto keep = auto_filter(sample, box, PerfectOracle(), scorer);
  EXPECT_EQ(keep.iou_vs_oracle, 1.0);
  EXPECT_GE(keep.uncertainty_percentile, 10.0);
  EXPECT_TRUE(keep.keep);
  ASSERT_TRUE(keep.revised_mask.has_value());
  EXPECT_EQ(keep.revised_mask->size(), box.area());

  const auto drop = auto_filter(sample, box, EmptyOracle(), scorer);
  EXPECT_EQ(drop.iou_vs_oracle, 0.0);
  EXPECT_FALSE(drop.keep);
  EXPECT_FALSE(drop.revised_mask.has_value());

  const auto broken = auto_filter(sample, box, BrokenOracle(), scorer);
  EXPECT_FALSE(broken.keep);
  EXPECT_NE(broken.diagnostic.find("model not loaded"), std::string::npos);
}

TEST(Filter, VerdictRespectsBothGatesAndIouMonotonicity) {
  const auto w = small_world();
  const SyntheticBackend backend(w, 0.5);
  const PaletteNoveltyScorer scorer(backend.palette());
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto [label, box] = scene_with_object(w, 200 + s);
    const auto sample = generate(label, render_prompt({"Quito", Weather::snowy, TimeOfDay::night, {}}), backend, s);
    const PerfectOracle oracle(0.5, s);
    bool kept_before = true;
    for (double thr : {0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0}) {
      const auto v = auto_filter(sample, box, oracle, scorer, {thr, 10.0});
      EXPECT_GE(v.iou_vs_oracle, 0.0);
      EXPECT_LE(v.iou_vs_oracle, 1.0);
      EXPECT_GE(v.uncertainty_percentile, 0.0);
      EXPECT_LE(v.uncertainty_percentile, 100.0);
      if (v.iou_vs_oracle < thr || v.uncertainty_percentile < 10.0) { EXPECT_FALSE(v.keep); }
      if (!kept_before) { EXPECT_FALSE(v.keep); }
      kept_before = v.keep;
    }
  }
}

TEST(Filter, BlendFailuresAreRejected) {
  const auto w = small_world();
  const SyntheticBackend failing(w, 1.0);
  const PaletteNoveltyScorer scorer(failing.palette());
  const AppearanceOracle oracle;
  int rejected = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto [label, box] = scene_with_object(w, 300 + s);
    Rng rng(s);
    const auto sample = generate(label, render_prompt(sample_prompt(rng)), failing, s);
    rejected += !auto_filter(sample, box, oracle, scorer).keep;
  }
  EXPECT_GE(rejected, 95);
}

TEST(AugmentSample, DeterministicAndConsistent) {
  const auto w = small_world();
  Rng rng(8);
  const SegSample original{"train_00000", Image(32, 32, 0.5), layout_scene(w, rng)};
  const auto backend = make_backend("synthetic", w, 0.2);
  const PaletteNoveltyScorer scorer(Palette{w});
  const AppearanceOracle oracle;
  AugmentationOptions opt;
  opt.objects_per_image = 2;
  const auto a = augment_sample(original, w, *backend, oracle, scorer, opt, 42, "aug_00000");
  const auto b = augment_sample(original, w, *backend, oracle, scorer, opt, 42, "aug_00000");
  EXPECT_EQ(a.sample.image.data, b.sample.image.data);
  EXPECT_EQ(a.sample.label.data, b.sample.label.data);
  EXPECT_EQ(a.prompt, b.prompt);
  EXPECT_EQ(a.keep, b.keep);
  EXPECT_EQ(a.objects.size(), 2u);
  EXPECT_LE(a.regenerations, opt.max_retries);
  ASSERT_TRUE(a.prompt.ood_class.has_value());
  // outside the object boxes the labels are the original ones
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool in_box = std::any_of(a.objects.begin(), a.objects.end(), [&](const ObjectRecord& o) {
        return y >= o.box.row && y < o.box.row + o.box.height && x >= o.box.col && x < o.box.col + o.box.width;
      });
      if (!in_box) { EXPECT_EQ(a.sample.label.at(y, x), original.label.at(y, x)); }
    }
}

TEST(AugmentSample, ZeroRetriesWithCertainFailureDiscards) {
  const auto w = small_world();
  Rng rng(9);
  const SegSample original{"train_00001", Image(32, 32, 0.5), layout_scene(w, rng)};
  const auto backend = make_backend("synthetic", w, 1.0);
  const PaletteNoveltyScorer scorer(Palette{w});
  AugmentationOptions opt;
  opt.max_retries = 0;
  for (std::uint64_t s = 0; s < 10; ++s)
    EXPECT_FALSE(augment_sample(original, w, *backend, AppearanceOracle(), scorer, opt, s, "aug").keep);
  opt.objects_per_image = 0;
  EXPECT_THROW(augment_sample(original, w, *backend, AppearanceOracle(), scorer, opt, 0, "aug"), ValidationError);
}

TEST(RuleAugment, DeterministicUnderSeed) {
  const auto w = small_world();
  const SyntheticBackend backend(w, 0.0);
  const auto [label, box] = scene_with_object(w, 10);
  const SegSample s{"x", backend.render_base(label, 1), label};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = rule_augment(s, seed), b = rule_augment(s, seed);
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.label.data, b.label.data);
    for (auto v : a.label.data) EXPECT_TRUE(v < w.num_classes || v == kOodId || v == kIgnoreId);
    for (double v : a.image.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(RuleAugment, FlipIsAnInvolutionAndKeepsTheClassHistogram) {
  const auto w = small_world();
  const SyntheticBackend backend(w, 0.0);
  const auto [label, box] = scene_with_object(w, 11);
  const SegSample s{"x", backend.render_base(label, 2), label};
  RuleAugConfig flip_only{0, 0, 0, 0, 0, 0, 0, 1.0, 0};
  const auto once = rule_augment(s, 1, flip_only);
  const auto twice = rule_augment(once, 2, flip_only);
  EXPECT_EQ(twice.image.data, s.image.data);
  EXPECT_EQ(twice.label.data, s.label.data);
  std::map<int, int> h0, h1;
  for (auto v : s.label.data) ++h0[v];
  for (auto v : once.label.data) ++h1[v];
  EXPECT_EQ(h0, h1);
  EXPECT_NE(once.label.data, s.label.data);
}

TEST(RuleAugment, GeometryMovesImageAndLabelsTogether) {
  // a flat colour per class makes alignment checkable pixel by pixel
  const int n = 32;
  LabelMap l(n, n);
  Image img(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int c = (x / 8 + y / 8) % 4;
      l.at(y, x) = static_cast<std::uint8_t>(c);
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c / 4.0;
    }
  RuleAugConfig geo{0, 0, 0, 0, 0, 1.0, 1.0, 0.75, 1.0};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto out = rule_augment({"g", img, l}, seed, geo);
    int agree = 0, total = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (out.label.at(y, x) == kIgnoreId) continue;
        ++total;
        agree += std::abs(out.image.at(0, y, x) - out.label.at(y, x) / 4.0) < 1e-9;
      }
    ASSERT_GT(total, 0);
    EXPECT_GE(static_cast<double>(agree) / total, 0.6);  // bilinear blends only at block edges
  }
}
