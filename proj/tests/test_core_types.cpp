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

#include <set>

#include "segshift/core_types.hpp"
#include "segshift/rng.hpp"

using namespace segshift;

namespace {

constexpr std::uint8_t O = kOodId;
constexpr std::uint8_t I = kIgnoreId;

SegSample sample(int h, int w, std::vector<std::uint8_t> labels, std::string id = "s") {
  SegSample s{std::move(id), Image(h, w, 0.5), LabelMap(h, w)};
  s.label.data = std::move(labels);
  return s;
}

AugmentedPair pair_of(std::vector<std::uint8_t> a, std::vector<std::uint8_t> b, int h = 2, int w = 2) {
  return make_augmented_pair(sample(h, w, std::move(a)), sample(h, w, std::move(b)), LabelSpace(3));
}

}  // namespace

TEST(LabelSpace, RejectsBadConstants) {
  EXPECT_THROW(LabelSpace(1), ValidationError);
  EXPECT_THROW(LabelSpace(3, 7, 7), ValidationError);
  EXPECT_THROW(LabelSpace(3, 1, 255), ValidationError);
  EXPECT_THROW(LabelSpace(3, 254, 2), ValidationError);
  const LabelSpace s(6);
  EXPECT_TRUE(s.is_known(5));
  EXPECT_FALSE(s.is_known(6));
  EXPECT_TRUE(s.contains(254));
  EXPECT_TRUE(s.contains(255));
  EXPECT_FALSE(s.contains(13));
}

TEST(IndexSets, TwoByTwoExample) {
  const std::vector<AugmentedPair> batch{pair_of({0, 1, O, I}, {0, O, 1, 1})};
  const auto sets = build_index_sets(batch, LabelSpace(3));
  EXPECT_EQ(sets.in_idx.size(), 2u);
  EXPECT_EQ(sets.aug_idx.size(), 3u);
  EXPECT_EQ(sets.out_idx.size(), 2u);
}

TEST(IndexSets, NoOodMeansEmptyOutSet) {
  const std::vector<AugmentedPair> batch{pair_of({0, 1, 2, 0}, {1, 1, I, 2}), pair_of({2, 2, 2, 2}, {0, 0, 0, 0})};
  EXPECT_TRUE(build_index_sets(batch, LabelSpace(3)).out_idx.empty());
}

TEST(IndexSets, AllIgnoreGivesEmptySets) {
  std::vector<AugmentedPair> batch;
  for (int n = 0; n < 4; ++n) batch.push_back(pair_of({I, I, I, I}, {I, I, I, I}));
  const auto sets = build_index_sets(batch, LabelSpace(3));
  EXPECT_TRUE(sets.in_idx.empty());
  EXPECT_TRUE(sets.aug_idx.empty());
  EXPECT_TRUE(sets.out_idx.empty());
}

TEST(IndexSets, EmptyBatchIsNotAnError) {
  const auto sets = build_index_sets(std::span<const AugmentedPair>{}, LabelSpace(3));
  EXPECT_TRUE(sets.in_idx.empty() && sets.aug_idx.empty() && sets.out_idx.empty());
}

TEST(IndexSets, OutOfSpaceLabelThrows) {
  AugmentedPair p = pair_of({0, 1, 2, 0}, {0, 1, 2, 0});
  p.augmented.label.data[3] = 9;
  const std::vector<AugmentedPair> batch{p};
  EXPECT_THROW(build_index_sets(batch, LabelSpace(3)), ValidationError);
}

// Property: every pixel of both label maps lands in exactly one bucket, the
// three lists are disjoint, and nothing points at an ignore pixel.
TEST(IndexSets, PartitionProperty) {
  Rng rng(11);
  const LabelSpace space(4);
  const std::uint8_t values[] = {0, 1, 2, 3, O, I};
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 1 + static_cast<int>(rng.below(5)), w = 1 + static_cast<int>(rng.below(5));
    std::vector<AugmentedPair> batch;
    std::size_t ignore = 0, total = 0;
    const auto n = 1 + rng.below(4);
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<std::uint8_t> la(static_cast<std::size_t>(h * w)), lb(la.size());
      for (auto* l : {&la, &lb})
        for (auto& v : *l) {
          v = values[rng.below(6)];
          ignore += v == I;
          ++total;
        }
      batch.push_back(make_augmented_pair(sample(h, w, la), sample(h, w, lb), space));
    }
    const auto sets = build_index_sets(batch, space);
    EXPECT_EQ(sets.in_idx.size() + sets.aug_idx.size() + sets.out_idx.size() + ignore, total);
    std::set<PixelRef> seen;
    for (const auto* list : {&sets.in_idx, &sets.aug_idx, &sets.out_idx})
      for (const auto& r : *list) {
        EXPECT_TRUE(seen.insert(r).second);
        const auto& lab = r.source == Source::original ? batch[r.pair].original.label : batch[r.pair].augmented.label;
        EXPECT_NE(lab.data[r.pixel], I);
      }
    for (const auto& r : sets.in_idx) EXPECT_EQ(r.source, Source::original);
    for (const auto& r : sets.aug_idx) EXPECT_EQ(r.source, Source::augmented);
    // order-stable
    const auto again = build_index_sets(batch, space);
    EXPECT_EQ(again.in_idx, sets.in_idx);
    EXPECT_EQ(again.aug_idx, sets.aug_idx);
    EXPECT_EQ(again.out_idx, sets.out_idx);
  }
}

TEST(AugmentedPair, PairValidOnlyOnKnownPixelsOfBothMaps) {
  const auto p = pair_of({0, 1, O, 2}, {0, 2, 1, I});
  EXPECT_EQ(p.pair_valid, (std::vector<std::uint8_t>{1, 0, 0, 0}));
  EXPECT_THROW(make_augmented_pair(sample(2, 2, {0, 0, 0, 0}), sample(1, 4, {0, 0, 0, 0}), LabelSpace(3)),
               ValidationError);
}

TEST(ValidateSample, ConformingSampleIsOk) {
  EXPECT_TRUE(validate_sample(sample(2, 2, {0, 1, O, I}), LabelSpace(3)).empty());
}

TEST(ValidateSample, LabelOutsideSpaceGivesOneViolation) {
  const auto v = validate_sample(sample(2, 2, {0, 3 + 7, 1, 2}), LabelSpace(3));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, Violation::Kind::label_out_of_space);
}

TEST(ValidateSample, ImageValueOutOfRangeGivesOneViolation) {
  auto s = sample(2, 2, {0, 1, 2, 0});
  s.image.at(1, 1, 0) = 1.5;
  const auto v = validate_sample(s, LabelSpace(3));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, Violation::Kind::image_out_of_range);
}

TEST(ValidateSample, ShapeMismatchIsReported) {
  SegSample s{"x", Image(2, 3), LabelMap(2, 2)};
  const auto v = validate_sample(s, LabelSpace(3));
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v[0].kind, Violation::Kind::shape_mismatch);
}
