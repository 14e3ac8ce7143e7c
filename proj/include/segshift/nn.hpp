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

// Small encoder-decoder segmentation network and the Adam optimizer.
//
// Activations are stored channel-major as (channels x H*W) matrices. The
// network:
//   e1 = relu(conv3x3(x))                    H x W,     12 ch
//   e2 = relu(conv3x3(avgpool2(e1)))         H/2 x W/2, 16 ch
//   feat = relu(conv1x1([e1, up2(e2)]))      H x W,     F ch   (decoder)
//   logits = feat^T * W_cls                  HW x C            (classifier)
// The encoder is (e1, e2), the decoder is the 1x1 conv, and W_cls (F x C)
// has no bias so that an uncertainty head can be initialised from it.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"
#include "segshift/rng.hpp"

namespace segshift {

inline constexpr int kModelStride = 2;

struct Param {
  std::string name;
  Eigen::MatrixXd value;
};

using Grads = std::vector<Eigen::MatrixXd>;

namespace nn {

/// 3x3 zero-padded patches: (9 * C) x (H * W); row = c * 9 + ky * 3 + kx.
inline Eigen::MatrixXd im2col3(const Eigen::MatrixXd& x, int h, int w) {
  const auto C = x.rows();
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(9 * C, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < C; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            cols(row, y * w + xx) = x(c, sy * w + sx);
          }
        }
      }
  return cols;
}

/// Adjoint of im2col3.
inline Eigen::MatrixXd col2im3(const Eigen::MatrixXd& cols, Eigen::Index channels, int h, int w) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(channels, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            x(c, sy * w + sx) += cols(row, y * w + xx);
          }
        }
      }
  return x;
}

inline Eigen::MatrixXd avgpool2(const Eigen::MatrixXd& x, int h, int w) {
  const int h2 = h / 2, w2 = w / 2;
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(h2) * w2);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (int y = 0; y < h2; ++y)
      for (int xx = 0; xx < w2; ++xx)
        out(c, y * w2 + xx) = 0.25 * (x(c, (2 * y) * w + 2 * xx) + x(c, (2 * y) * w + 2 * xx + 1) +
                                      x(c, (2 * y + 1) * w + 2 * xx) + x(c, (2 * y + 1) * w + 2 * xx + 1));
  return out;
}

/// Nearest-neighbour 2x upsampling; its adjoint sums each 2x2 block, and the
/// adjoint of avgpool2 spreads a quarter to each.
inline Eigen::MatrixXd upsample2(const Eigen::MatrixXd& x, int h2, int w2) {
  const int w = 2 * w2;
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(4) * h2 * w2);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (int y = 0; y < 2 * h2; ++y)
      for (int xx = 0; xx < w; ++xx) out(c, y * w + xx) = x(c, (y / 2) * w2 + xx / 2);
  return out;
}

inline Eigen::MatrixXd block_sum2(const Eigen::MatrixXd& g, int h, int w, double scale) {
  const int h2 = h / 2, w2 = w / 2;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.rows(), static_cast<Eigen::Index>(h2) * w2);
  for (Eigen::Index c = 0; c < g.rows(); ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out(c, (y / 2) * w2 + xx / 2) += scale * g(c, y * w + xx);
  return out;
}

inline Eigen::MatrixXd spread2(const Eigen::MatrixXd& g, int h, int w, double scale) {
  const int w2 = w / 2;
  Eigen::MatrixXd out(g.rows(), static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < g.rows(); ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out(c, y * w + xx) = scale * g(c, (y / 2) * w2 + xx / 2);
  return out;
}

inline Eigen::MatrixXd relu(const Eigen::MatrixXd& a) { return a.cwiseMax(0.0); }

inline Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).select(g, 0.0);
}

inline Eigen::MatrixXd image_matrix(const Image& img) {
  Eigen::MatrixXd x(3, static_cast<Eigen::Index>(img.pixels()));
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < img.pixels(); ++p) x(c, static_cast<Eigen::Index>(p)) = img.at(c, p);
  return x;
}

/// Per-image, per-channel standardisation of the input.
inline Eigen::MatrixXd standardize_channels(Eigen::MatrixXd x) {
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const double mean = x.row(c).mean();
    const double var = (x.row(c).array() - mean).square().mean();
    x.row(c) = (x.row(c).array() - mean) / std::sqrt(var + 1e-4);
  }
  return x;
}

inline Eigen::MatrixXd he_normal(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  const double s = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, s);
  return m;
}

}  // namespace nn

struct ModelShape {
  int enc1 = 12;
  int enc2 = 16;
  int features = 16;
  int num_classes = 6;
};

/// Everything the backward pass needs from one forward pass.
struct ForwardCache {
  int height = 0;
  int width = 0;
  Eigen::MatrixXd cols1, a1, e1;  // full resolution
  Eigen::MatrixXd cols2, a2, e2;  // half resolution
  Eigen::MatrixXd cat;            // (enc1 + enc2) x HW, decoder input
  Eigen::MatrixXd ad;             // decoder pre-activation, F x HW
  Eigen::MatrixXd features;       // HW x F (row per pixel)
  Eigen::MatrixXd logits;         // HW x C
};

class PixelSegModel {
 public:
  // Parameter indices.
  enum : std::size_t { kEnc1W, kEnc1B, kEnc2W, kEnc2B, kDecW, kDecB, kClsW, kNumParams };

  PixelSegModel() = default;

  PixelSegModel(const ModelShape& shape, std::uint64_t seed) : shape_(shape) {
    if (shape.num_classes < 2 || shape.features < 1 || shape.enc1 < 1 || shape.enc2 < 1)
      throw ValidationError("invalid model shape");
    Rng rng(seed);
    params_.resize(kNumParams);
    params_[kEnc1W] = {"enc1.weight", nn::he_normal(shape.enc1, 27, 27, rng)};
    params_[kEnc1B] = {"enc1.bias", Eigen::MatrixXd::Zero(shape.enc1, 1)};
    params_[kEnc2W] = {"enc2.weight", nn::he_normal(shape.enc2, 9 * shape.enc1, 9.0 * shape.enc1, rng)};
    params_[kEnc2B] = {"enc2.bias", Eigen::MatrixXd::Zero(shape.enc2, 1)};
    const int cat = shape.enc1 + shape.enc2;
    params_[kDecW] = {"dec.weight", nn::he_normal(shape.features, cat, cat, rng)};
    params_[kDecB] = {"dec.bias", Eigen::MatrixXd::Constant(shape.features, 1, 0.01)};
    params_[kClsW] = {"cls.weight", nn::he_normal(shape.features, shape.num_classes, shape.features, rng) * 0.5};
  }

  const ModelShape& shape() const { return shape_; }
  int num_classes() const { return shape_.num_classes; }
  int feature_dim() const { return shape_.features; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Eigen::MatrixXd& classifier() { return params_[kClsW].value; }
  const Eigen::MatrixXd& classifier() const { return params_[kClsW].value; }

  Grads zero_grads() const {
    Grads g;
    for (const auto& p : params_) g.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    return g;
  }

  ForwardCache forward(const Image& img) const {
    const int h = img.height, w = img.width;
    if (h % kModelStride || w % kModelStride)
      throw ValidationError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by the model stride " + std::to_string(kModelStride));
    ForwardCache f;
    f.height = h;
    f.width = w;
    const Eigen::MatrixXd x = nn::standardize_channels(nn::image_matrix(img));
    f.cols1 = nn::im2col3(x, h, w);
    f.a1 = (p(kEnc1W) * f.cols1).colwise() + p(kEnc1B).col(0);
    f.e1 = nn::relu(f.a1);
    const Eigen::MatrixXd pooled = nn::avgpool2(f.e1, h, w);
    f.cols2 = nn::im2col3(pooled, h / 2, w / 2);
    f.a2 = (p(kEnc2W) * f.cols2).colwise() + p(kEnc2B).col(0);
    f.e2 = nn::relu(f.a2);
    f.cat.resize(shape_.enc1 + shape_.enc2, f.e1.cols());
    f.cat.topRows(shape_.enc1) = f.e1;
    f.cat.bottomRows(shape_.enc2) = nn::upsample2(f.e2, h / 2, w / 2);
    decode(f);
    return f;
  }

  /// Re-runs the decoder and classifier on a cache whose encoder part is set.
  void decode(ForwardCache& f) const {
    f.ad = (p(kDecW) * f.cat).colwise() + p(kDecB).col(0);
    f.features = nn::relu(f.ad).transpose();
    f.logits = f.features * p(kClsW);
  }

  /// Accumulates parameter gradients given dL/dlogits (HW x C) and an extra
  /// dL/dfeatures (HW x F, may be empty). Stops below the decoder when
  /// `through_encoder` is false.
  void backward(const ForwardCache& f, const Eigen::MatrixXd& d_logits, const Eigen::MatrixXd& d_features_extra,
                Grads& g, bool through_encoder) const {
    const int h = f.height, w = f.width;
    if (d_logits.size()) g[kClsW].noalias() += f.features.transpose() * d_logits;
    Eigen::MatrixXd d_feat = Eigen::MatrixXd::Zero(f.features.rows(), f.features.cols());
    if (d_logits.size()) d_feat.noalias() += d_logits * p(kClsW).transpose();
    if (d_features_extra.size()) d_feat += d_features_extra;
    const Eigen::MatrixXd d_ad = nn::relu_mask(d_feat.transpose(), f.ad);
    g[kDecW].noalias() += d_ad * f.cat.transpose();
    g[kDecB] += d_ad.rowwise().sum();
    if (!through_encoder) return;
    const Eigen::MatrixXd d_cat = p(kDecW).transpose() * d_ad;
    Eigen::MatrixXd d_e1 = d_cat.topRows(shape_.enc1);
    const Eigen::MatrixXd d_e2 = nn::block_sum2(d_cat.bottomRows(shape_.enc2), h, w, 1.0);
    const Eigen::MatrixXd d_a2 = nn::relu_mask(d_e2, f.a2);
    g[kEnc2W].noalias() += d_a2 * f.cols2.transpose();
    g[kEnc2B] += d_a2.rowwise().sum();
    const Eigen::MatrixXd d_pooled = nn::col2im3(p(kEnc2W).transpose() * d_a2, shape_.enc1, h / 2, w / 2);
    d_e1 += nn::spread2(d_pooled, h, w, 0.25);
    const Eigen::MatrixXd d_a1 = nn::relu_mask(d_e1, f.a1);
    g[kEnc1W].noalias() += d_a1 * f.cols1.transpose();
    g[kEnc1B] += d_a1.rowwise().sum();
  }

  /// Per-pixel argmax over class logits.
  static std::vector<std::uint8_t> predict(const Eigen::MatrixXd& logits) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return out;
  }

 private:
  const Eigen::MatrixXd& p(std::size_t k) const { return params_[k].value; }

  ModelShape shape_;
  std::vector<Param> params_;
};

/// Adam over a chosen subset of a parameter list.
class Adam {
 public:
  Adam(const std::vector<Param>& params, std::vector<std::size_t> trainable, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : trainable_(std::move(trainable)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    for (const auto& p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(std::vector<Param>& params, const Grads& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto k : trainable_) {
      m_[k] = b1_ * m_[k] + (1.0 - b1_) * g[k];
      v_[k] = b2_ * v_[k] + (1.0 - b2_) * g[k].cwiseAbs2();
      params[k].value.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<std::size_t> trainable_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

inline bool all_finite(const Grads& g) {
  for (const auto& m : g)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace segshift
