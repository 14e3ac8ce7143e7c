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

// Toy-model pretraining and the two-stage uncertainty training protocol:
// stage 1 fits the uncertainty head on frozen features with the contrastive
// loss alone; stage 2 also fine-tunes the decoder and classifier with
// cross-entropy on originals and selective cross-entropy on augmentations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "segshift/augmentation.hpp"
#include "segshift/core_types.hpp"
#include "segshift/datakit.hpp"
#include "segshift/errors.hpp"
#include "segshift/losses.hpp"
#include "segshift/metrics.hpp"
#include "segshift/nn.hpp"
#include "segshift/rng.hpp"
#include "segshift/uncertainty_heads.hpp"

namespace segshift {

enum class Stage { stage1, stage2 };
enum class ContrastiveKind { relative, absolute };

inline std::string_view to_string(Stage s) { return s == Stage::stage1 ? "stage1" : "stage2"; }
inline std::string_view to_string(ContrastiveKind k) { return k == ContrastiveKind::relative ? "relative" : "absolute"; }

inline ContrastiveKind contrastive_kind_from_string(std::string_view s) {
  if (s == "relative") return ContrastiveKind::relative;
  if (s == "absolute") return ContrastiveKind::absolute;
  throw ValidationError("unknown contrastive loss '" + std::string(s) + "' (relative|absolute)");
}

struct TrainConfig {
  Stage stage = Stage::stage1;
  Margins margins = Margins::pixel_defaults();
  LossWeights weights;
  double selection_ratio = kDefaultSelectionRatio;
  std::size_t pair_sample_k = 4096;
  double learning_rate = 1e-3;
  int steps = 200;
  int batch_size = 4;
  std::uint64_t seed = 0;
  ContrastiveKind loss = ContrastiveKind::relative;
  bool learnable_head = true;  // false: the head stays tied to the classifier
  double score_sign = kDefaultScoreSign;
  int eval_every = 25;  // validation cadence for model selection; 0 = final step only

  void validate() const {
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (pair_sample_k == 0) throw ValidationError("pair_sample_k must be >= 1");
    if (score_sign != 1.0 && score_sign != -1.0) throw ValidationError("score_sign must be +1 or -1");
    if (eval_every < 0) throw ValidationError("eval_every must be >= 0");
    margins.validate();
    weights.validate();
    selection_count(selection_ratio, 1);
  }

  /// Canonical text of every field; hashed into checkpoints.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "stage=" << to_string(stage) << ";margins=" << margins.lambda1 << "," << margins.lambda2 << ","
       << margins.lambda3 << ";weights=" << weights.beta1 << "," << weights.beta2
       << ";ratio=" << selection_ratio << ";k=" << pair_sample_k << ";lr=" << learning_rate
       << ";steps=" << steps << ";batch=" << batch_size << ";seed=" << seed << ";loss=" << to_string(loss)
       << ";learnable=" << learnable_head << ";sign=" << score_sign << ";eval_every=" << eval_every;
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }
};

struct CurvePoint {
  long step = 0;
  double loss = 0.0;
  double l_unc = 0.0;
  double l_seg_in = 0.0;
  double l_seg_aug = 0.0;
};

struct Checkpoint {
  PixelSegModel model;
  UncertaintyHead head;
  bool head_tied = false;  // head weights mirror the classifier
  long step = 0;
  std::string stage = "pretrained";
  std::uint64_t config_hash = 0;
  std::map<std::string, double> metrics;
  std::string status = "ok";  // "diverged" when training hit a non-finite loss
  std::vector<CurvePoint> curve;  // in-memory only
};

/// Wraps a pretrained model with a head initialised from its classifier.
inline Checkpoint make_initial_checkpoint(const PixelSegModel& model, bool learnable_head = true) {
  Checkpoint ck;
  ck.model = model;
  ck.head = init_from_class_head(model.classifier(), HeadMode::pixel_energy, model.num_classes());
  ck.head_tied = !learnable_head;
  return ck;
}

/// Anomaly score map (sign * u) for one forward pass.
inline Eigen::VectorXd anomaly_map(const Checkpoint& ck, const ForwardCache& f, double sign = kDefaultScoreSign) {
  return sign * pixel_energy_uncertainty(f.features, ck.head);
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  ModelShape shape;
  int steps = 600;
  int batch_size = 4;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  double min_accuracy = 0.90;
};

struct PretrainReport {
  double final_loss = 0.0;
  double accuracy = 0.0;
  std::vector<CurvePoint> curve;
};

namespace detail {

/// Batch of `bs` indices for `step`, drawn from a per-epoch permutation.
inline std::vector<std::size_t> batch_indices(std::size_t n, int bs, long step, std::uint64_t seed) {
  std::vector<std::size_t> out;
  const auto per_epoch = std::max<std::size_t>(1, n / static_cast<std::size_t>(bs));
  const auto epoch = static_cast<std::uint64_t>(step) / per_epoch;
  const auto slot = static_cast<std::size_t>(static_cast<std::uint64_t>(step) % per_epoch);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0xe90c, epoch));
  rng.shuffle(perm.begin(), perm.end());
  for (int k = 0; k < bs; ++k) out.push_back(perm[(slot * static_cast<std::size_t>(bs) + k) % n]);
  return out;
}

/// Mean CE over known pixels of one image; accumulates dL/dlogits scaled by w.
inline double image_ce(const Eigen::MatrixXd& logits, const LabelMap& label, const LabelSpace& space, double w,
                        Eigen::MatrixXd& d_logits, std::size_t& count) {
  d_logits = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  double sum = 0.0;
  count = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = label.data[static_cast<std::size_t>(i)];
    if (!space.is_known(y)) continue;
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double s = e.sum();
    sum += mx + std::log(s) - logits(i, y);
    d_logits.row(i) = e / s * w;
    d_logits(i, y) -= w;
    ++count;
  }
  return sum;
}

}  // namespace detail

inline double pixel_accuracy(const PixelSegModel& model, const std::vector<DatasetEntry>& data,
                             const LabelSpace& space) {
  std::uint64_t correct = 0, total = 0;
  for (const auto& e : data) {
    const auto f = model.forward(e.sample.image);
    const auto pred = PixelSegModel::predict(f.logits);
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (!space.is_known(e.sample.label.data[p])) continue;
      ++total;
      correct += pred[p] == e.sample.label.data[p];
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

/// Trains the whole network with plain cross-entropy on clean images.
/// Throws TrainingDivergedError when the loss goes non-finite and Error when
/// the final train accuracy stays below cfg.min_accuracy.
inline PixelSegModel pretrain_toy_model(const std::vector<DatasetEntry>& train, const LabelSpace& space,
                                        const PretrainConfig& cfg, PretrainReport* report = nullptr) {
  if (train.empty()) throw ValidationError("pretraining needs at least one sample");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ValidationError("invalid pretraining schedule");
  ModelShape shape = cfg.shape;
  shape.num_classes = space.num_known();
  PixelSegModel model(shape, derive_seed(cfg.seed, 0x1417));
  std::vector<std::size_t> all(PixelSegModel::kNumParams);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Adam opt(model.params(), all, cfg.learning_rate);
  PretrainReport rep;
  for (long step = 0; step < cfg.steps; ++step) {
    const auto idx = detail::batch_indices(train.size(), cfg.batch_size, step, cfg.seed);
    std::vector<ForwardCache> caches;
    std::size_t n = 0;
    for (auto i : idx) {
      caches.push_back(model.forward(train[i].sample.image));
      for (auto v : train[i].sample.label.data) n += space.is_known(v);
    }
    if (n == 0) continue;
    Grads g = model.zero_grads();
    double loss = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Eigen::MatrixXd d;
      std::size_t c = 0;
      loss += detail::image_ce(caches[b].logits, train[idx[b]].sample.label, space, 1.0 / static_cast<double>(n), d, c);
      model.backward(caches[b], d, {}, g, true);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss) || !all_finite(g))
      throw TrainingDivergedError("pretraining loss became non-finite at step " + std::to_string(step));
    opt.step(model.params(), g);
    rep.curve.push_back({step, loss, 0.0, loss, 0.0});
    rep.final_loss = loss;
  }
  rep.accuracy = pixel_accuracy(model, train, space);
  if (report) *report = rep;
  if (rep.accuracy < cfg.min_accuracy) {
    std::ostringstream os;
    os << "pretrained model reached pixel accuracy " << rep.accuracy << " < " << cfg.min_accuracy
       << " after " << cfg.steps << " steps; increase --pretrain-steps";
    throw Error(os.str());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOutput {
  MetricsReport report;
  std::vector<Eigen::VectorXd> maps;  // per image anomaly scores, when requested
  double mean_in = 0.0;               // mean anomaly score of known pixels
  double mean_out = 0.0;              // mean anomaly score of OOD pixels (NaN if none)
};

/// Scores every image of a split. Ignore pixels are dropped; anomaly metrics
/// are reported only when the split has both OOD and known pixels.
inline EvalOutput evaluate_entries(const Checkpoint& ck, const std::vector<DatasetEntry>& entries,
                                   const LabelSpace& space, const std::string& regime, bool keep_maps = false,
                                   double sign = kDefaultScoreSign) {
  if (ck.model.num_classes() != space.num_known())
    throw ValidationError("checkpoint has " + std::to_string(ck.model.num_classes()) +
                          " classes but the dataset label space has " + std::to_string(space.num_known()));
  EvalOutput out;
  ScoredPixels sp;
  ConfusionMatrix cm(space);
  double sum_in = 0.0, sum_out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (const auto& e : entries) {
    const auto f = ck.model.forward(e.sample.image);
    const Eigen::VectorXd a = anomaly_map(ck, f, sign);
    const auto pred = PixelSegModel::predict(f.logits);
    cm.add(pred, e.sample.label.data);
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const int y = e.sample.label.data[p];
      if (space.is_ignore(y)) continue;
      const bool ood = space.is_ood(y);
      sp.scores.push_back(a(static_cast<Eigen::Index>(p)));
      sp.labels.push_back(ood);
      if (ood) { sum_out += a(static_cast<Eigen::Index>(p)); ++n_out; }
      else { sum_in += a(static_cast<Eigen::Index>(p)); ++n_in; }
    }
    if (keep_maps) out.maps.push_back(a);
  }
  auto& r = out.report;
  r.regime = regime;
  r.images = entries.size();
  r.pixels = sp.scores.size();
  r.ood_pixels = n_out;
  if (n_out > 0 && n_in > 0) {
    r.auroc = auroc(sp);
    r.ap = average_precision(sp);
    r.fpr95 = fpr_at_95_tpr(sp);
  }
  const auto seg = cm.scores();
  r.miou = seg.miou;
  r.macc = seg.macc;
  r.pixel_accuracy = seg.pixel_accuracy;
  r.per_class_iou = seg.per_class_iou;
  out.mean_in = n_in ? sum_in / static_cast<double>(n_in) : std::nan("");
  out.mean_out = n_out ? sum_out / static_cast<double>(n_out) : std::nan("");
  return out;
}

/// UncertaintyScorer backed by a trained checkpoint (for the auto-filter).
class ModelScorer final : public UncertaintyScorer {
 public:
  explicit ModelScorer(Checkpoint ck, double sign = kDefaultScoreSign) : ck_(std::move(ck)), sign_(sign) {}

  std::vector<double> anomaly_scores(const Image& image) const override {
    const auto f = ck_.model.forward(image);
    const Eigen::VectorXd a = anomaly_map(ck_, f, sign_);
    return {a.data(), a.data() + a.size()};
  }

 private:
  Checkpoint ck_;
  double sign_;
};

// ---------------------------------------------------------------------------
// Two-stage training

struct StepResult {
  double loss = 0.0;
  double l_unc = 0.0;
  double l_seg_in = 0.0;
  double l_seg_aug = 0.0;
  Grads model_grads;
  Eigen::MatrixXd head_grad;
};

/// Loss and gradients for one batch of pairs. Stage 1 evaluates L_unc only;
/// stage 2 adds beta1 * CE(originals) + beta2 * selective CE(augmented).
inline StepResult compute_step(const Checkpoint& ck, std::span<const AugmentedPair> batch, const TrainConfig& cfg,
                               const LabelSpace& space, PairSampler& sampler,
                               const std::optional<AbsoluteTargets>& targets) {
  const bool stage2 = cfg.stage == Stage::stage2;
  const double sign = cfg.score_sign;
  const std::size_t N = batch.size();
  std::vector<ForwardCache> co, ca;
  std::vector<EnergyForward> eo, ea;
  for (const auto& pr : batch) {
    co.push_back(ck.model.forward(pr.original.image));
    ca.push_back(ck.model.forward(pr.augmented.image));
    eo.push_back(pixel_energy_forward(co.back().features, ck.head));
    ea.push_back(pixel_energy_forward(ca.back().features, ck.head));
  }
  const IndexSets sets = build_index_sets(batch, space);
  const auto score = [&](const PixelRef& r) {
    const auto& fw = r.source == Source::original ? eo[r.pair] : ea[r.pair];
    return sign * fw.u(static_cast<Eigen::Index>(r.pixel));
  };
  std::vector<double> u_in, u_aug, u_out;
  for (const auto& r : sets.in_idx) u_in.push_back(score(r));
  for (const auto& r : sets.aug_idx) u_aug.push_back(score(r));
  for (const auto& r : sets.out_idx) u_out.push_back(score(r));

  ContrastiveLoss cl;
  if (cfg.loss == ContrastiveKind::relative) {
    std::vector<std::vector<std::int32_t>> pos_in(N), pos_aug(N);
    for (std::size_t n = 0; n < N; ++n) {
      pos_in[n].assign(batch[n].original.label.pixels(), -1);
      pos_aug[n].assign(batch[n].augmented.label.pixels(), -1);
    }
    for (std::size_t k = 0; k < sets.in_idx.size(); ++k) pos_in[sets.in_idx[k].pair][sets.in_idx[k].pixel] = static_cast<std::int32_t>(k);
    for (std::size_t k = 0; k < sets.aug_idx.size(); ++k) pos_aug[sets.aug_idx[k].pair][sets.aug_idx[k].pixel] = static_cast<std::int32_t>(k);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> valid;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < batch[n].pair_valid.size(); ++p)
        if (batch[n].pair_valid[p] && pos_aug[n][p] >= 0 && pos_in[n][p] >= 0)
          valid.emplace_back(static_cast<std::uint32_t>(pos_aug[n][p]), static_cast<std::uint32_t>(pos_in[n][p]));
    cl = relative_contrastive_loss(u_in, u_aug, u_out, valid, cfg.margins, sampler);
  } else {
    if (!targets) throw ValidationError("absolute contrastive loss needs score targets");
    cl = absolute_contrastive_loss(u_in, u_aug, u_out, *targets);
  }

  std::vector<Eigen::VectorXd> du_o(N), du_a(N);
  for (std::size_t n = 0; n < N; ++n) {
    du_o[n] = Eigen::VectorXd::Zero(eo[n].u.size());
    du_a[n] = Eigen::VectorXd::Zero(ea[n].u.size());
  }
  const auto add = [&](const PixelRef& r, double g) {
    (r.source == Source::original ? du_o : du_a)[r.pair](static_cast<Eigen::Index>(r.pixel)) += sign * g;
  };
  for (std::size_t k = 0; k < sets.in_idx.size(); ++k) add(sets.in_idx[k], cl.d_in[k]);
  for (std::size_t k = 0; k < sets.aug_idx.size(); ++k) add(sets.aug_idx[k], cl.d_aug[k]);
  for (std::size_t k = 0; k < sets.out_idx.size(); ++k) add(sets.out_idx[k], cl.d_out[k]);

  StepResult res;
  res.l_unc = cl.value;
  res.head_grad = Eigen::MatrixXd::Zero(ck.head.weights.rows(), ck.head.weights.cols());
  std::vector<Eigen::MatrixXd> dfeat_o(N), dfeat_a(N);
  for (std::size_t n = 0; n < N; ++n) {
    auto go = pixel_energy_backward(co[n].features, ck.head, eo[n], du_o[n]);
    auto ga = pixel_energy_backward(ca[n].features, ck.head, ea[n], du_a[n]);
    res.head_grad += go.d_weights + ga.d_weights;
    dfeat_o[n] = std::move(go.d_features);
    dfeat_a[n] = std::move(ga.d_features);
  }
  res.loss = res.l_unc;
  if (!stage2) return res;

  // segmentation terms over the whole batch
  const auto P = static_cast<Eigen::Index>(batch[0].original.label.pixels());
  const auto C = ck.model.num_classes();
  Eigen::MatrixXd lo(P * static_cast<Eigen::Index>(N), C), la(P * static_cast<Eigen::Index>(N), C);
  std::vector<std::uint8_t> yo, ya;
  for (std::size_t n = 0; n < N; ++n) {
    if (static_cast<Eigen::Index>(batch[n].original.label.pixels()) != P)
      throw ValidationError("stage 2 needs equally sized images within a batch");
    lo.middleRows(static_cast<Eigen::Index>(n) * P, P) = co[n].logits;
    la.middleRows(static_cast<Eigen::Index>(n) * P, P) = ca[n].logits;
    yo.insert(yo.end(), batch[n].original.label.data.begin(), batch[n].original.label.data.end());
    ya.insert(ya.end(), batch[n].augmented.label.data.begin(), batch[n].augmented.label.data.end());
  }
  SelectionMask all;
  all.eta = known_class_eligibility(yo, space);
  all.eligible = all.selected = static_cast<std::size_t>(std::count(all.eta.begin(), all.eta.end(), 1));
  const auto ce_in = selective_cross_entropy_logits(lo, yo, all, space);
  const auto elig = known_class_eligibility(ya, space);
  const auto per_pixel = per_pixel_cross_entropy(la, ya, space);
  const auto sel = build_selection_mask(per_pixel, elig, cfg.selection_ratio);
  const auto ce_aug = selective_cross_entropy_logits(la, ya, sel, space);
  res.l_seg_in = ce_in.value;
  res.l_seg_aug = ce_aug.value;
  res.loss = res.l_unc + cfg.weights.beta1 * res.l_seg_in + cfg.weights.beta2 * res.l_seg_aug;

  res.model_grads = ck.model.zero_grads();
  for (std::size_t n = 0; n < N; ++n) {
    const Eigen::MatrixXd dlo = cfg.weights.beta1 * ce_in.d_input.middleRows(static_cast<Eigen::Index>(n) * P, P);
    const Eigen::MatrixXd dla = cfg.weights.beta2 * ce_aug.d_input.middleRows(static_cast<Eigen::Index>(n) * P, P);
    ck.model.backward(co[n], dlo, dfeat_o[n], res.model_grads, false);
    ck.model.backward(ca[n], dla, dfeat_a[n], res.model_grads, false);
  }
  return res;
}

/// Mean anomaly score of known pixels over the originals of `pairs`
/// (reference point for the absolute-loss targets).
inline double mean_inlier_score(const Checkpoint& ck, const std::vector<AugmentedPair>& pairs,
                                const LabelSpace& space, double sign) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& pr : pairs) {
    const auto f = ck.model.forward(pr.original.image);
    const Eigen::VectorXd a = anomaly_map(ck, f, sign);
    for (std::size_t p = 0; p < pr.original.label.pixels(); ++p)
      if (space.is_known(pr.original.label.data[p])) { s += a(static_cast<Eigen::Index>(p)); ++n; }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

struct TrainData {
  const std::vector<AugmentedPair>* pairs = nullptr;
  const std::vector<DatasetEntry>* validation = nullptr;  // model selection split (OOD present)
};

namespace detail {

inline double selection_score(const Checkpoint& ck, const TrainData& data, const LabelSpace& space, double sign) {
  if (!data.validation || data.validation->empty()) return 0.0;
  const auto ev = evaluate_entries(ck, *data.validation, space, "val", false, sign);
  return ev.report.ap.value_or(0.0);
}

inline Checkpoint run_stage(const Checkpoint& init, const TrainData& data, const TrainConfig& cfg,
                            const LabelSpace& space) {
  cfg.validate();
  if (!data.pairs) throw ValidationError("training needs augmented pairs");
  const bool stage2 = cfg.stage == Stage::stage2;
  Checkpoint ck = init;
  ck.stage = std::string(to_string(cfg.stage));
  ck.config_hash = cfg.hash();
  ck.curve.clear();
  ck.head_tied = ck.head_tied || !cfg.learnable_head;
  if (ck.head_tied) ck.head.weights = ck.model.classifier();

  const auto& pairs = *data.pairs;
  const bool trains_anything = stage2 || !ck.head_tied;
  if (cfg.steps == 0 || pairs.empty() || !trains_anything) {
    ck.metrics["val_ap"] = selection_score(ck, data, space, cfg.score_sign);
    return ck;
  }

  std::optional<AbsoluteTargets> targets;
  if (cfg.loss == ContrastiveKind::absolute) {
    const double t_in = mean_inlier_score(ck, pairs, space, cfg.score_sign);
    targets = AbsoluteTargets{t_in, t_in + cfg.margins.lambda1};
  }

  // optimiser over [model params..., head]
  std::vector<std::size_t> trainable;
  if (stage2) trainable = {PixelSegModel::kDecW, PixelSegModel::kDecB, PixelSegModel::kClsW};
  std::vector<Param> head_param{{"head.weight", ck.head.weights}};
  Adam model_opt(ck.model.params(), trainable.empty() ? std::vector<std::size_t>{} : trainable, cfg.learning_rate);
  Adam head_opt(head_param, {0}, cfg.learning_rate);

  Checkpoint best = ck;
  double best_score = selection_score(ck, data, space, cfg.score_sign);
  best.metrics["val_ap"] = best_score;
  Checkpoint last_good = ck;

  PairSampler sampler(derive_seed(cfg.seed, 0x9a125), cfg.pair_sample_k);
  for (long step = 0; step < cfg.steps; ++step) {
    const auto idx = batch_indices(pairs.size(), cfg.batch_size, step, cfg.seed);
    std::vector<AugmentedPair> batch;
    for (auto i : idx) batch.push_back(pairs[i]);
    StepResult r = compute_step(ck, batch, cfg, space, sampler, targets);
    const bool finite = std::isfinite(r.loss) && r.head_grad.allFinite() && (!stage2 || all_finite(r.model_grads));
    if (!finite) {
      Checkpoint out = last_good;
      out.status = "diverged";
      out.curve = ck.curve;
      return out;
    }
    ck.curve.push_back({step, r.loss, r.l_unc, r.l_seg_in, r.l_seg_aug});
    last_good = ck;

    if (ck.head_tied) {
      // the classifier doubles as the head
      if (stage2) r.model_grads[PixelSegModel::kClsW] += r.head_grad;
    } else {
      head_param[0].value = ck.head.weights;
      head_opt.step(head_param, {r.head_grad});
      ck.head.weights = head_param[0].value;
    }
    if (stage2) model_opt.step(ck.model.params(), r.model_grads);
    if (ck.head_tied) ck.head.weights = ck.model.classifier();
    ck.step = step + 1;

    const bool eval_now = (cfg.eval_every > 0 && ck.step % cfg.eval_every == 0) || ck.step == cfg.steps;
    if (eval_now && data.validation) {
      const double s = selection_score(ck, data, space, cfg.score_sign);
      if (s > best_score) {
        best_score = s;
        best = ck;
        best.metrics["val_ap"] = s;
      }
    }
  }
  if (!data.validation) best = ck;
  best.curve = ck.curve;
  best.metrics["final_loss"] = ck.curve.empty() ? 0.0 : ck.curve.back().loss;
  best.metrics["selected_step"] = static_cast<double>(best.step);
  return best;
}

}  // namespace detail

/// Stage 1: only the head moves; the model parameters stay bit-identical.
inline Checkpoint run_stage1(const Checkpoint& init, const TrainData& data, TrainConfig cfg, const LabelSpace& space) {
  cfg.stage = Stage::stage1;
  return detail::run_stage(init, data, cfg, space);
}

/// Stage 2: decoder, classifier and head are fine-tuned; the encoder stays frozen.
inline Checkpoint run_stage2(const Checkpoint& from_stage1, const TrainData& data, TrainConfig cfg,
                             const LabelSpace& space) {
  cfg.stage = Stage::stage2;
  return detail::run_stage(from_stage1, data, cfg, space);
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Fraction of planted corrupted pixels that end up outside the selection
/// (i.e. with the largest losses), measured batch by batch as in training.
struct SelectionRecovery {
  std::size_t corrupted = 0;
  std::size_t corrupted_unselected = 0;
  std::size_t unselected = 0;
  double recovery() const { return corrupted ? static_cast<double>(corrupted_unselected) / static_cast<double>(corrupted) : 1.0; }
};

inline SelectionRecovery measure_selection_recovery(const Checkpoint& ck, const std::vector<AugmentationEntry>& entries,
                                                    const LabelSpace& space, double ratio, int batch_size) {
  SelectionRecovery out;
  std::vector<const AugmentationEntry*> kept;
  for (const auto& e : entries)
    if (e.keep) kept.push_back(&e);
  for (std::size_t b = 0; b < kept.size(); b += static_cast<std::size_t>(batch_size)) {
    std::vector<double> losses;
    std::vector<std::uint8_t> labels, clean;
    for (std::size_t k = b; k < std::min(kept.size(), b + static_cast<std::size_t>(batch_size)); ++k) {
      const auto f = ck.model.forward(kept[k]->sample->image);
      const auto l = per_pixel_cross_entropy(f.logits, kept[k]->sample->label.data, space);
      losses.insert(losses.end(), l.begin(), l.end());
      labels.insert(labels.end(), kept[k]->sample->label.data.begin(), kept[k]->sample->label.data.end());
      clean.insert(clean.end(), kept[k]->clean_label->data.begin(), kept[k]->clean_label->data.end());
    }
    const auto elig = known_class_eligibility(labels, space);
    const auto sel = build_selection_mask(losses, elig, ratio);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (!elig[p]) continue;
      const bool corrupted = labels[p] != clean[p];
      out.corrupted += corrupted;
      if (!sel.eta[p]) {
        ++out.unselected;
        out.corrupted_unselected += corrupted;
      }
    }
  }
  return out;
}

/// Mean clean-label cross-entropy over the known pixels of the augmented set.
inline double clean_cross_entropy(const Checkpoint& ck, const std::vector<AugmentationEntry>& entries,
                                  const LabelSpace& space) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (!e.keep) continue;
    const auto f = ck.model.forward(e.sample->image);
    for (double v : per_pixel_cross_entropy(f.logits, e.clean_label->data, space))
      if (!std::isnan(v)) { s += v; ++n; }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace segshift
