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

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"
#include "segshift/rng.hpp"

namespace segshift {

/// Margins of the three relative-contrastive hinge terms.
struct Margins {
  double lambda1 = 10.0;  // outlier vs original inlier
  double lambda2 = 5.0;   // outlier vs augmented inlier
  double lambda3 = 5.0;   // augmented vs original inlier (paired)

  void validate() const {
    for (double v : {lambda1, lambda2, lambda3})
      if (!std::isfinite(v) || v < 0.0)
        throw ValidationError("contrastive margins must be finite and non-negative");
  }

  Margins scaled(double s) const { return {lambda1 * s, lambda2 * s, lambda3 * s}; }

  /// Defaults for pixel-wise (energy) heads.
  static Margins pixel_defaults() { return {10.0, 5.0, 5.0}; }
  /// Defaults for mask-classification (MSP) heads.
  static Margins mask_defaults() { return {0.7, 0.5, 0.2}; }
};

struct LossWeights {
  double beta1 = 50.0;  // segmentation loss on original images
  double beta2 = 10.0;  // selective segmentation loss on augmented images

  void validate() const {
    if (!std::isfinite(beta1) || !std::isfinite(beta2) || beta1 < 0.0 || beta2 < 0.0)
      throw ValidationError("loss weights must be finite and non-negative");
  }
};

inline constexpr double kDefaultSelectionRatio = 0.8;

/// tau_lambda(x) = max(lambda - x, 0).
inline double margin_hinge(double x, double lam) { return std::max(lam - x, 0.0); }

/// Derivative of margin_hinge w.r.t. x (subgradient 0 at the kink).
inline double margin_hinge_grad(double x, double lam) { return x < lam ? -1.0 : 0.0; }

/// Index pairs drawn for each term, as positions into the u_in / u_aug /
/// u_out arrays.
struct SampledPairs {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out_in;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out_aug;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> aug_in;  // (aug position, in position)
};

/// Draws contrastive pairs from a seeded stream. When the full cross product
/// of a term has at most K pairs it is enumerated exhaustively; otherwise K
/// pairs are drawn uniformly with replacement.
class PairSampler {
 public:
  explicit PairSampler(std::uint64_t seed, std::size_t pairs_per_term = 4096)
      : rng_(seed), k_(pairs_per_term) {
    if (k_ == 0) throw ValidationError("pair sample count K must be positive");
  }

  std::size_t pairs_per_term() const noexcept { return k_; }

  SampledPairs sample(std::size_t n_in, std::size_t n_aug, std::size_t n_out,
                      std::span<const std::pair<std::uint32_t, std::uint32_t>> valid_aug_in) {
    SampledPairs s;
    cross(n_out, n_in, s.out_in);
    cross(n_out, n_aug, s.out_aug);
    if (valid_aug_in.size() <= k_) {
      s.aug_in.assign(valid_aug_in.begin(), valid_aug_in.end());
    } else {
      s.aug_in.reserve(k_);
      for (std::size_t k = 0; k < k_; ++k) s.aug_in.push_back(valid_aug_in[rng_.below(valid_aug_in.size())]);
    }
    return s;
  }

 private:
  void cross(std::size_t na, std::size_t nb,
             std::vector<std::pair<std::uint32_t, std::uint32_t>>& out) {
    if (na == 0 || nb == 0) return;
    if (na * nb <= k_) {
      out.reserve(na * nb);
      for (std::uint32_t a = 0; a < na; ++a)
        for (std::uint32_t b = 0; b < nb; ++b) out.emplace_back(a, b);
      return;
    }
    out.reserve(k_);
    for (std::size_t k = 0; k < k_; ++k)
      out.emplace_back(static_cast<std::uint32_t>(rng_.below(na)),
                       static_cast<std::uint32_t>(rng_.below(nb)));
  }

  Rng rng_;
  std::size_t k_;
};

struct ContrastiveLoss {
  double value = 0.0;
  double term_out_in = 0.0;
  double term_out_aug = 0.0;
  double term_aug_in = 0.0;
  bool no_pairs = false;  // all three terms were empty
  std::vector<double> d_in;
  std::vector<double> d_aug;
  std::vector<double> d_out;
};

/// Relative contrastive loss over pre-sampled pairs. Each term is the mean
/// hinge over its pairs; an empty term contributes 0. Scores are consumed as
/// given, so the caller fixes the orientation.
inline ContrastiveLoss relative_contrastive_loss(std::span<const double> u_in,
                                                 std::span<const double> u_aug,
                                                 std::span<const double> u_out,
                                                 const SampledPairs& pairs,
                                                 const Margins& margins) {
  margins.validate();
  ContrastiveLoss r;
  r.d_in.assign(u_in.size(), 0.0);
  r.d_aug.assign(u_aug.size(), 0.0);
  r.d_out.assign(u_out.size(), 0.0);

  if (!pairs.out_in.empty()) {
    const double w = 1.0 / static_cast<double>(pairs.out_in.size());
    for (auto [o, i] : pairs.out_in) {
      const double gap = u_out[o] - u_in[i];
      r.term_out_in += margin_hinge(gap, margins.lambda1) * w;
      const double g = margin_hinge_grad(gap, margins.lambda1) * w;
      r.d_out[o] += g;
      r.d_in[i] -= g;
    }
  }
  if (!pairs.out_aug.empty()) {
    const double w = 1.0 / static_cast<double>(pairs.out_aug.size());
    for (auto [o, c] : pairs.out_aug) {
      const double gap = u_out[o] - u_aug[c];
      r.term_out_aug += margin_hinge(gap, margins.lambda2) * w;
      const double g = margin_hinge_grad(gap, margins.lambda2) * w;
      r.d_out[o] += g;
      r.d_aug[c] -= g;
    }
  }
  if (!pairs.aug_in.empty()) {
    const double w = 1.0 / static_cast<double>(pairs.aug_in.size());
    for (auto [c, i] : pairs.aug_in) {
      const double x = -(u_aug[c] - u_in[i]);
      r.term_aug_in += margin_hinge(x, margins.lambda3) * w;
      const double g = margin_hinge_grad(x, margins.lambda3) * w;
      r.d_aug[c] -= g;
      r.d_in[i] += g;
    }
  }
  r.no_pairs = pairs.out_in.empty() && pairs.out_aug.empty() && pairs.aug_in.empty();
  r.value = r.term_out_in + r.term_out_aug + r.term_aug_in;
  return r;
}

/// Samples pairs and evaluates the loss in one call.
inline ContrastiveLoss relative_contrastive_loss(
    std::span<const double> u_in, std::span<const double> u_aug, std::span<const double> u_out,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> valid_aug_in, const Margins& margins,
    PairSampler& sampler) {
  margins.validate();
  const auto pairs = sampler.sample(u_in.size(), u_aug.size(), u_out.size(), valid_aug_in);
  return relative_contrastive_loss(u_in, u_aug, u_out, pairs, margins);
}

/// Fixed score targets for the absolute-loss ablation.
struct AbsoluteTargets {
  double inlier = 0.0;   // inlier scores are pushed below this
  double outlier = 0.0;  // outlier scores are pushed above this
};

/// Supervises score values directly instead of gaps: mean hinge of outliers
/// above a constant plus mean hinge of (original and augmented) inliers
/// below a constant.
inline ContrastiveLoss absolute_contrastive_loss(std::span<const double> u_in,
                                                 std::span<const double> u_aug,
                                                 std::span<const double> u_out,
                                                 const AbsoluteTargets& t) {
  ContrastiveLoss r;
  r.d_in.assign(u_in.size(), 0.0);
  r.d_aug.assign(u_aug.size(), 0.0);
  r.d_out.assign(u_out.size(), 0.0);
  if (!u_out.empty()) {
    const double w = 1.0 / static_cast<double>(u_out.size());
    for (std::size_t o = 0; o < u_out.size(); ++o) {
      r.term_out_in += margin_hinge(u_out[o] - t.outlier, 0.0) * w;
      r.d_out[o] += margin_hinge_grad(u_out[o] - t.outlier, 0.0) * w;
    }
  }
  if (!u_in.empty()) {
    const double w = 1.0 / static_cast<double>(u_in.size());
    for (std::size_t i = 0; i < u_in.size(); ++i) {
      r.term_out_aug += margin_hinge(t.inlier - u_in[i], 0.0) * w;
      r.d_in[i] -= margin_hinge_grad(t.inlier - u_in[i], 0.0) * w;
    }
  }
  if (!u_aug.empty()) {
    const double w = 1.0 / static_cast<double>(u_aug.size());
    for (std::size_t c = 0; c < u_aug.size(); ++c) {
      r.term_aug_in += margin_hinge(t.inlier - u_aug[c], 0.0) * w;
      r.d_aug[c] -= margin_hinge_grad(t.inlier - u_aug[c], 0.0) * w;
    }
  }
  r.no_pairs = u_out.empty() && u_in.empty() && u_aug.empty();
  r.value = r.term_out_in + r.term_out_aug + r.term_aug_in;
  return r;
}

/// Number of pixels kept for a ratio in (0, 1]; tolerant to the rounding of
/// ratio * n (0.7 * 10 must give 7, not 8).
inline std::size_t selection_count(double ratio, std::size_t eligible) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("selection ratio must lie in (0, 1]");
  const double want = std::ceil(ratio * static_cast<double>(eligible) - 1e-9);
  return std::min(eligible, static_cast<std::size_t>(std::max(0.0, want)));
}

struct SelectionMask {
  std::vector<std::uint8_t> eta;
  double ratio = 1.0;
  std::size_t selected = 0;
  std::size_t eligible = 0;
};

/// Keeps the ceil(ratio * |eligible|) eligible pixels with the smallest loss.
/// Ties go to the lower flat index; NaN losses rank last.
inline SelectionMask build_selection_mask(std::span<const double> per_pixel_loss,
                                          std::span<const std::uint8_t> eligibility,
                                          double ratio) {
  if (per_pixel_loss.size() != eligibility.size())
    throw ValidationError("loss and eligibility maps differ in size");
  SelectionMask m;
  m.ratio = ratio;
  m.eta.assign(per_pixel_loss.size(), 0);
  std::vector<std::uint32_t> idx;
  for (std::uint32_t i = 0; i < eligibility.size(); ++i)
    if (eligibility[i]) idx.push_back(i);
  m.eligible = idx.size();
  const std::size_t keep = selection_count(ratio, idx.size());
  const auto key = [&](std::uint32_t i) {
    const double v = per_pixel_loss[i];
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };
  const auto less = [&](std::uint32_t a, std::uint32_t b) {
    const double ka = key(a), kb = key(b);
    return ka < kb || (ka == kb && a < b);
  };
  if (keep < idx.size()) std::nth_element(idx.begin(), idx.begin() + keep, idx.end(), less);
  for (std::size_t k = 0; k < keep; ++k) m.eta[idx[k]] = 1;
  m.selected = keep;
  return m;
}

struct SelectiveCe {
  double value = 0.0;
  Eigen::MatrixXd d_input;  // gradient w.r.t. the matrix that was passed in
};

/// Mean negative log-likelihood over selected pixels, from probabilities
/// (P x C). The gradient is w.r.t. the probabilities.
inline SelectiveCe selective_cross_entropy(const Eigen::MatrixXd& probs,
                                           std::span<const std::uint8_t> labels,
                                           const SelectionMask& mask, const LabelSpace& space) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || mask.eta.size() != labels.size())
    throw ValidationError("probabilities, labels, and mask differ in size");
  SelectiveCe r;
  r.d_input = Eigen::MatrixXd::Zero(probs.rows(), probs.cols());
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask.eta[i]) continue;
    if (!space.is_known(labels[i]))
      throw ValidationError("selected pixel " + std::to_string(i) + " has a non-class label");
    if (std::abs(probs.row(static_cast<Eigen::Index>(i)).sum() - 1.0) > 1e-5)
      throw ValidationError("probability row " + std::to_string(i) + " does not sum to 1");
    ++n;
  }
  if (n == 0) return r;
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask.eta[i]) continue;
    const auto row = static_cast<Eigen::Index>(i);
    const double p = probs(row, labels[i]);
    r.value -= std::log(p) * w;
    r.d_input(row, labels[i]) = -w / p;
  }
  return r;
}

/// Per-pixel softmax cross-entropy from logits (P x C); pixels whose label is
/// not a known class get NaN.
inline std::vector<double> per_pixel_cross_entropy(const Eigen::MatrixXd& logits,
                                                   std::span<const std::uint8_t> labels,
                                                   const LabelSpace& space) {
  std::vector<double> out(labels.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!space.is_known(labels[i])) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    out[i] = lse - row(labels[i]);
  }
  return out;
}

/// Selective cross-entropy evaluated from logits; gradient w.r.t. logits.
inline SelectiveCe selective_cross_entropy_logits(const Eigen::MatrixXd& logits,
                                                  std::span<const std::uint8_t> labels,
                                                  const SelectionMask& mask,
                                                  const LabelSpace& space) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || mask.eta.size() != labels.size())
    throw ValidationError("logits, labels, and mask differ in size");
  SelectiveCe r;
  r.d_input = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask.eta[i]) continue;
    if (!space.is_known(labels[i]))
      throw ValidationError("selected pixel " + std::to_string(i) + " has a non-class label");
    ++n;
  }
  if (n == 0) return r;
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask.eta[i]) continue;
    const auto row = static_cast<Eigen::Index>(i);
    const double mx = logits.row(row).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(row).array() - mx).exp();
    const double s = e.sum();
    r.value += (mx + std::log(s) - logits(row, labels[i])) * w;
    r.d_input.row(row) = e / s * w;
    r.d_input(row, labels[i]) -= w;
  }
  return r;
}

/// Eligibility for selection: known-class, non-ignore pixels.
inline std::vector<std::uint8_t> known_class_eligibility(std::span<const std::uint8_t> labels,
                                                         const LabelSpace& space) {
  std::vector<std::uint8_t> e(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) e[i] = space.is_known(labels[i]);
  return e;
}

struct DiceBce {
  double value = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  Eigen::MatrixXd d_logits;  // M x HW
  std::vector<std::uint8_t> kept;  // M x HW, row-major per mask
};

/// Dice + BCE over mask logits (M x HW) against binary targets, keeping per
/// mask only the ceil(ratio * HW) pixels with the lowest BCE. The dice term
/// uses +1 smoothing in numerator and denominator. Both terms are averaged
/// over masks.
inline DiceBce selective_dice_bce(const Eigen::MatrixXd& mask_logits,
                                  const Eigen::MatrixXd& targets, double ratio) {
  if (mask_logits.rows() != targets.rows() || mask_logits.cols() != targets.cols())
    throw ValidationError("mask logits and targets differ in shape");
  const Eigen::Index M = mask_logits.rows();
  const Eigen::Index P = mask_logits.cols();
  DiceBce r;
  r.d_logits = Eigen::MatrixXd::Zero(M, P);
  r.kept.assign(static_cast<std::size_t>(M * P), 0);
  if (M == 0 || P == 0) return r;
  const std::size_t keep = selection_count(ratio, static_cast<std::size_t>(P));
  const std::vector<std::uint8_t> all(static_cast<std::size_t>(P), 1);
  std::vector<double> bce(static_cast<std::size_t>(P));
  std::vector<double> sig(static_cast<std::size_t>(P));
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index p = 0; p < P; ++p) {
      const double x = mask_logits(m, p);
      const double t = targets(m, p);
      bce[p] = std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
      sig[p] = 1.0 / (1.0 + std::exp(-x));
    }
    const auto sel = build_selection_mask(bce, all, ratio);
    double bce_sum = 0.0, inter = 0.0, denom = 0.0;
    for (Eigen::Index p = 0; p < P; ++p) {
      if (!sel.eta[p]) continue;
      r.kept[static_cast<std::size_t>(m * P + p)] = 1;
      bce_sum += bce[p];
      inter += sig[p] * targets(m, p);
      denom += sig[p] + targets(m, p);
    }
    const double n = static_cast<double>(keep);
    const double wm = 1.0 / static_cast<double>(M);
    r.bce += bce_sum / n * wm;
    const double num = 2.0 * inter + 1.0;
    const double den = denom + 1.0;
    r.dice += (1.0 - num / den) * wm;
    for (Eigen::Index p = 0; p < P; ++p) {
      if (!sel.eta[p]) continue;
      const double t = targets(m, p);
      const double d_bce = (sig[p] - t) / n;
      const double d_sig = -(2.0 * t * den - num) / (den * den);
      r.d_logits(m, p) = wm * (d_bce + d_sig * sig[p] * (1.0 - sig[p]));
    }
  }
  r.value = r.bce + r.dice;
  return r;
}

/// L = L_unc + beta1 * L_seg_in + beta2 * L_seg_aug.
inline double total_loss(double l_unc, double l_seg_in, double l_seg_aug, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(l_unc) || !std::isfinite(l_seg_in) || !std::isfinite(l_seg_aug))
    throw ValidationError("total_loss received a non-finite term");
  return l_unc + w.beta1 * l_seg_in + w.beta2 * l_seg_aug;
}

}  // namespace segshift
