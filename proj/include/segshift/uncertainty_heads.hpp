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

// Learnable semantic-exclusive uncertainty functions.
//
// Both heads are a linear projection W (F x C) applied to backbone features,
// followed by either a log-sum-exp (pixel models) or a mask-weighted maximum
// class probability (mask-classification models). The raw value u returned
// here is a confidence (high for known classes); anomaly scores are sign * u
// with sign = -1 by default.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>

#include "segshift/errors.hpp"

namespace segshift {

enum class HeadMode { pixel_energy, mask_msp };

inline std::string_view to_string(HeadMode m) {
  return m == HeadMode::pixel_energy ? "pixel_energy" : "mask_msp";
}

inline HeadMode head_mode_from_string(std::string_view s) {
  if (s == "pixel_energy" || s == "pixel") return HeadMode::pixel_energy;
  if (s == "mask_msp" || s == "mask") return HeadMode::mask_msp;
  throw ValidationError("unknown head mode '" + std::string(s) + "'");
}

/// Default orientation: anomaly = -u, so higher means more anomalous.
inline constexpr double kDefaultScoreSign = -1.0;

struct UncertaintyHead {
  Eigen::MatrixXd weights;  // F x C
  HeadMode mode = HeadMode::pixel_energy;

  int feature_dim() const { return static_cast<int>(weights.rows()); }
  int num_classes() const { return static_cast<int>(weights.cols()); }
};

/// Per-pixel (or per-query) features, plus pre-sigmoid mask logits for
/// mask-classification models (M x HW, row-major pixel order per query).
struct FeatureBundle {
  Eigen::MatrixXd features;  // M x F
  std::optional<Eigen::MatrixXd> mask_logits;
  int height = 0;
  int width = 0;
};

/// Copies the classifier weights into a fresh head. The copy is independent:
/// training the head never touches the source matrix.
inline UncertaintyHead init_from_class_head(const Eigen::MatrixXd& class_weights, HeadMode mode,
                                            int num_classes) {
  if (class_weights.cols() != num_classes)
    throw ValidationError("class head has " + std::to_string(class_weights.cols()) +
                          " columns, expected " + std::to_string(num_classes));
  if (class_weights.rows() < 1) throw ValidationError("class head has no feature rows");
  if (!class_weights.allFinite()) throw ValidationError("class head contains non-finite weights");
  return UncertaintyHead{Eigen::MatrixXd(class_weights), mode};
}

/// Row-wise log-sum-exp with max subtraction.
inline Eigen::VectorXd logsumexp_rows(const Eigen::MatrixXd& z) {
  Eigen::VectorXd out(z.rows());
  for (Eigen::Index m = 0; m < z.rows(); ++m) {
    const double mx = z.row(m).maxCoeff();
    out(m) = mx + std::log((z.row(m).array() - mx).exp().sum());
  }
  return out;
}

/// Row-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index m = 0; m < z.rows(); ++m) {
    const double mx = z.row(m).maxCoeff();
    out.row(m) = (z.row(m).array() - mx).exp();
    out.row(m) /= out.row(m).sum();
  }
  return out;
}

/// Forward state of the energy head, kept for the backward pass.
struct EnergyForward {
  Eigen::MatrixXd logits;   // M x C
  Eigen::MatrixXd softmax;  // M x C
  Eigen::VectorXd u;        // M
};

inline EnergyForward pixel_energy_forward(const Eigen::MatrixXd& features,
                                          const UncertaintyHead& head) {
  if (head.mode != HeadMode::pixel_energy)
    throw ValidationError("pixel_energy_uncertainty called on a mask_msp head");
  if (features.cols() != head.weights.rows())
    throw ValidationError("feature dim " + std::to_string(features.cols()) +
                          " does not match head dim " + std::to_string(head.weights.rows()));
  if (!features.allFinite()) throw ValidationError("non-finite features");
  EnergyForward fw;
  fw.logits = features * head.weights;
  fw.softmax = softmax_rows(fw.logits);
  fw.u = logsumexp_rows(fw.logits);
  return fw;
}

/// u_m = log sum_c exp((features * W)_{m,c}).
inline Eigen::VectorXd pixel_energy_uncertainty(const Eigen::MatrixXd& features,
                                                const UncertaintyHead& head) {
  return pixel_energy_forward(features, head).u;
}

struct HeadGradients {
  Eigen::MatrixXd d_weights;   // F x C
  Eigen::MatrixXd d_features;  // M x F
  Eigen::MatrixXd d_mask_logits;  // M x HW (mask mode only)
};

/// Backpropagates dL/du through the energy head.
inline HeadGradients pixel_energy_backward(const Eigen::MatrixXd& features,
                                           const UncertaintyHead& head, const EnergyForward& fw,
                                           const Eigen::VectorXd& d_u) {
  // d u_m / d z_{m,c} = softmax_{m,c}
  const Eigen::MatrixXd d_logits = fw.softmax.array().colwise() * d_u.array();
  return {features.transpose() * d_logits, d_logits * head.weights.transpose(), {}};
}

struct MaskMspForward {
  Eigen::MatrixXd class_probs;  // M x C, softmax over known classes
  Eigen::MatrixXd masks;        // M x HW, sigmoid of mask logits
  Eigen::MatrixXd class_maps;   // C x HW
  Eigen::VectorXd u;            // HW
  Eigen::VectorXi argmax;       // HW
};

inline MaskMspForward mask_msp_forward(const FeatureBundle& bundle, const UncertaintyHead& head) {
  if (head.mode != HeadMode::mask_msp)
    throw ValidationError("mask_msp_uncertainty called on a pixel_energy head");
  if (!bundle.mask_logits) throw ValidationError("mask_msp mode requires mask logits");
  const auto& ml = *bundle.mask_logits;
  if (ml.rows() != bundle.features.rows())
    throw ValidationError("mask logits and features disagree on the number of queries");
  if (bundle.features.cols() != head.weights.rows())
    throw ValidationError("feature dim does not match head dim");
  if (!bundle.features.allFinite() || !ml.allFinite())
    throw ValidationError("non-finite features or mask logits");
  MaskMspForward fw;
  fw.class_probs = softmax_rows(bundle.features * head.weights);
  fw.masks = (1.0 / (1.0 + (-ml.array()).exp())).matrix();
  fw.class_maps = fw.class_probs.transpose() * fw.masks;
  fw.u.resize(fw.class_maps.cols());
  fw.argmax.resize(fw.class_maps.cols());
  for (Eigen::Index p = 0; p < fw.class_maps.cols(); ++p) {
    Eigen::Index best = 0;
    fw.u(p) = fw.class_maps.col(p).maxCoeff(&best);
    fw.argmax(p) = static_cast<int>(best);
  }
  return fw;
}

/// u(h,w) = max_c sum_m softmax(f W)_{m,c} * sigmoid(mask_logits)_{m,(h,w)}.
inline Eigen::VectorXd mask_msp_uncertainty(const FeatureBundle& bundle,
                                            const UncertaintyHead& head) {
  return mask_msp_forward(bundle, head).u;
}

inline HeadGradients mask_msp_backward(const FeatureBundle& bundle, const UncertaintyHead& head,
                                       const MaskMspForward& fw, const Eigen::VectorXd& d_u) {
  const Eigen::Index C = fw.class_maps.rows();
  const Eigen::Index P = fw.class_maps.cols();
  Eigen::MatrixXd d_maps = Eigen::MatrixXd::Zero(C, P);
  for (Eigen::Index p = 0; p < P; ++p) d_maps(fw.argmax(p), p) = d_u(p);

  const Eigen::MatrixXd d_probs = fw.masks * d_maps.transpose();  // M x C
  const Eigen::MatrixXd d_masks = fw.class_probs * d_maps;        // M x HW
  // softmax Jacobian, row-wise
  const Eigen::VectorXd dot = (d_probs.array() * fw.class_probs.array()).rowwise().sum();
  const Eigen::MatrixXd d_logits =
      (fw.class_probs.array() * (d_probs.array().colwise() - dot.array())).matrix();

  HeadGradients g;
  g.d_weights = bundle.features.transpose() * d_logits;
  g.d_features = d_logits * head.weights.transpose();
  g.d_mask_logits = (d_masks.array() * fw.masks.array() * (1.0 - fw.masks.array())).matrix();
  return g;
}

/// Evaluates whichever form the head is configured for; returns one value
/// per pixel (pixel mode: one per feature row).
inline Eigen::VectorXd head_uncertainty(const FeatureBundle& bundle, const UncertaintyHead& head) {
  return head.mode == HeadMode::pixel_energy ? pixel_energy_uncertainty(bundle.features, head)
                                             : mask_msp_uncertainty(bundle, head);
}

}  // namespace segshift
