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

// Acceptance gate: runs each criterion and prints one PASS/FAIL line per
// criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "segshift/pipeline.hpp"
#include "test_util.hpp"

using namespace segshift;
using segshift::testing::fd_relative_error;
using segshift::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> to_vec(const Eigen::MatrixXd& m) { return {m.data(), m.data() + m.size()}; }

Eigen::MatrixXd as_col(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

// ---------------------------------------------------------------------------
// Brute-force oracles

double pairwise_auroc(const ScoredPixels& sp) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i)
    for (std::size_t j = 0; j < sp.scores.size(); ++j) {
      if (sp.labels[i] != 1 || sp.labels[j] != 0) continue;
      pairs += 1.0;
      wins += sp.scores[i] > sp.scores[j] ? 1.0 : sp.scores[i] == sp.scores[j] ? 0.5 : 0.0;
    }
  return wins / pairs;
}

std::pair<double, double> tp_fp_at(const ScoredPixels& sp, double t) {
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i)
    if (sp.scores[i] >= t) (sp.labels[i] ? tp : fp) += 1.0;
  return {tp, fp};
}

double sweep_ap(const ScoredPixels& sp) {
  const std::set<double, std::greater<>> ts(sp.scores.begin(), sp.scores.end());
  const double np = static_cast<double>(sp.positives());
  double ap = 0.0, prev = 0.0;
  for (double t : ts) {
    const auto [tp, fp] = tp_fp_at(sp, t);
    if (tp / np > prev) ap += (tp / np - prev) * tp / (tp + fp);
    prev = tp / np;
  }
  return ap;
}

double sweep_fpr95(const ScoredPixels& sp) {
  const double np = static_cast<double>(sp.positives()), nn = static_cast<double>(sp.negatives());
  double best = -INFINITY;
  for (double t : sp.scores)
    if (tp_fp_at(sp, t).first / np >= 0.95) best = std::max(best, t);
  return tp_fp_at(sp, best).second / nn;
}

std::pair<double, double> confusion_loop(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int C) {
  double iou = 0, acc = 0;
  int ni = 0, na = 0;
  for (int c = 0; c < C; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] >= C) continue;
      tp += gt[i] == c && pred[i] == c;
      fp += gt[i] != c && pred[i] == c;
      fn += gt[i] == c && pred[i] != c;
    }
    if (tp + fp + fn > 0) iou += tp / (tp + fp + fn), ++ni;
    if (tp + fn > 0) acc += tp / (tp + fn), ++na;
  }
  return {iou / ni, acc / na};
}

// ---------------------------------------------------------------------------

Verdict oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  int instances = 0;
  for (int t = 0; t < 120; ++t) {
    const auto n = 2 + rng.below(499);
    ScoredPixels sp;
    const int levels = t % 3 == 0 ? 3 : 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pos = rng.bernoulli(0.05 + 0.5 * rng.uniform());
      double s = rng.normal() + (pos ? 0.8 : 0.0);
      if (levels) s = std::round(s * levels) / levels;
      sp.scores.push_back(s);
      sp.labels.push_back(pos);
    }
    sp.labels[0] = 1, sp.labels[1] = 0;
    worst = std::max({worst, std::abs(auroc(sp) - pairwise_auroc(sp)), std::abs(average_precision(sp) - sweep_ap(sp)),
                      std::abs(fpr_at_95_tpr(sp) - sweep_fpr95(sp))});

    const int C = 2 + static_cast<int>(rng.below(6));
    const LabelSpace space(C);
    std::vector<std::uint8_t> gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = rng.uniform();
      gt[i] = r < 0.05 ? kOodId : r < 0.1 ? kIgnoreId : static_cast<std::uint8_t>(rng.below(C));
      pred[i] = rng.bernoulli(0.6) && gt[i] < C ? gt[i] : static_cast<std::uint8_t>(rng.below(C));
    }
    if (std::none_of(gt.begin(), gt.end(), [&](auto g) { return g < C; })) gt[0] = 0;
    const auto s = miou_macc(pred, gt, space);
    const auto [iou, acc] = confusion_loop(pred, gt, C);
    worst = std::max({worst, std::abs(s.miou - iou), std::abs(s.macc - acc)});
    ++instances;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 60.0, fmt("%d instances, max |diff| %.2e, %.1fs", instances, worst, secs)};
}

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double worst = 0.0;
  const auto track = [&](double e) { worst = std::max(worst, e); };

  // relative contrastive loss
  const Margins mg = Margins::pixel_defaults();
  for (int checked = 0; checked < 50;) {
    const auto in = to_vec(random_matrix(rng, 4, 1, 6)), aug = to_vec(random_matrix(rng, 3, 1, 6)),
               out = to_vec(random_matrix(rng, 2, 1, 6));
    const std::vector<std::pair<std::uint32_t, std::uint32_t>> valid{{0, 0}, {1, 2}, {2, 3}};
    const auto pairs = PairSampler(0, 1 << 20).sample(4, 3, 2, valid);
    bool kink = false;
    for (auto [o, i] : pairs.out_in) kink |= std::abs(out[o] - in[i] - mg.lambda1) < 1e-3;
    for (auto [o, c] : pairs.out_aug) kink |= std::abs(out[o] - aug[c] - mg.lambda2) < 1e-3;
    for (auto [c, i] : pairs.aug_in) kink |= std::abs(in[i] - aug[c] - mg.lambda3) < 1e-3;
    if (kink) continue;
    ++checked;
    const auto r = relative_contrastive_loss(in, aug, out, pairs, mg);
    track(fd_relative_error([&](const Eigen::MatrixXd& x) { return relative_contrastive_loss(to_vec(x), aug, out, pairs, mg).value; },
                            as_col(in), as_col(r.d_in)));
    track(fd_relative_error([&](const Eigen::MatrixXd& x) { return relative_contrastive_loss(in, to_vec(x), out, pairs, mg).value; },
                            as_col(aug), as_col(r.d_aug)));
    track(fd_relative_error([&](const Eigen::MatrixXd& x) { return relative_contrastive_loss(in, aug, to_vec(x), pairs, mg).value; },
                            as_col(out), as_col(r.d_out)));
  }

  // selective cross-entropy, in logit and probability form
  const LabelSpace space(4);
  for (int t = 0; t < 50; ++t) {
    const auto logits = random_matrix(rng, 8, 4, 1.0);
    std::vector<std::uint8_t> labels(8);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(4));
    std::vector<double> sel(8);
    for (auto& v : sel) v = rng.uniform();
    const auto mask = build_selection_mask(sel, std::vector<std::uint8_t>(8, 1), 0.6);
    const auto cel = selective_cross_entropy_logits(logits, labels, mask, space);
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return selective_cross_entropy_logits(z, labels, mask, space).value; },
                            logits, cel.d_input));
    const Eigen::MatrixXd probs = softmax_rows(logits);
    const auto ce = selective_cross_entropy(probs, labels, mask, space);
    const auto f_probs = [&](const Eigen::MatrixXd& p) {
      double s = 0.0;
      for (int i = 0; i < 8; ++i)
        if (mask.eta[static_cast<std::size_t>(i)]) s -= std::log(p(i, labels[static_cast<std::size_t>(i)]));
      return s / static_cast<double>(mask.selected);
    };
    track(fd_relative_error(f_probs, probs, ce.d_input));
  }

  // selective dice + BCE, skipping draws whose selection would flip under the probe
  for (int checked = 0; checked < 50;) {
    const auto x = random_matrix(rng, 2, 9, 2.0);
    Eigen::MatrixXd tg(2, 9);
    for (Eigen::Index i = 0; i < tg.size(); ++i) tg.data()[i] = rng.bernoulli(0.5);
    bool near_cut = false;
    for (int m = 0; m < 2; ++m) {
      std::vector<double> b(9);
      for (int p = 0; p < 9; ++p)
        b[static_cast<std::size_t>(p)] = std::max(x(m, p), 0.0) - x(m, p) * tg(m, p) + std::log1p(std::exp(-std::abs(x(m, p))));
      std::sort(b.begin(), b.end());
      const auto k = selection_count(0.7, 9);
      near_cut |= b[k] - b[k - 1] < 1e-3;
    }
    if (near_cut) continue;
    ++checked;
    const auto r = selective_dice_bce(x, tg, 0.7);
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return selective_dice_bce(z, tg, 0.7).value; }, x, r.d_logits));
  }

  // pixel-energy head
  for (int t = 0; t < 50; ++t) {
    const auto x = random_matrix(rng, 7, 5), w = random_matrix(rng, 5, 4);
    const auto coef = random_matrix(rng, 7, 1);
    const UncertaintyHead head{w, HeadMode::pixel_energy};
    const auto g = pixel_energy_backward(x, head, pixel_energy_forward(x, head), coef.col(0));
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return coef.col(0).dot(pixel_energy_uncertainty(z, head)); }, x, g.d_features));
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return coef.col(0).dot(pixel_energy_uncertainty(x, UncertaintyHead{z, HeadMode::pixel_energy})); },
                            w, g.d_weights));
  }

  // mask-MSP head, skipping draws with a near-tie at any pixel's argmax
  for (int checked = 0; checked < 50;) {
    const auto q = random_matrix(rng, 3, 4), ml = random_matrix(rng, 3, 6, 2.0), w = random_matrix(rng, 4, 3);
    const auto coef = random_matrix(rng, 6, 1);
    const UncertaintyHead head{w, HeadMode::mask_msp};
    const FeatureBundle b{q, ml, 2, 3};
    const auto fw = mask_msp_forward(b, head);
    bool tie = false;
    for (Eigen::Index p = 0; p < fw.class_maps.cols(); ++p) {
      std::vector<double> col(fw.class_maps.col(p).data(), fw.class_maps.col(p).data() + fw.class_maps.rows());
      std::sort(col.rbegin(), col.rend());
      tie |= col[0] - col[1] < 1e-3;
    }
    if (tie) continue;
    ++checked;
    const auto g = mask_msp_backward(b, head, fw, coef.col(0));
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return coef.col(0).dot(mask_msp_uncertainty({z, ml, 2, 3}, head)); }, q, g.d_features));
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return coef.col(0).dot(mask_msp_uncertainty({q, z, 2, 3}, head)); }, ml, g.d_mask_logits));
    track(fd_relative_error([&](const Eigen::MatrixXd& z) { return coef.col(0).dot(mask_msp_uncertainty(b, UncertaintyHead{z, HeadMode::mask_msp})); },
                            w, g.d_weights));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-3 && secs < 120.0, fmt("5 functions x 50 instances, worst rel. err %.2e, %.1fs", worst, secs)};
}

// ---------------------------------------------------------------------------
// Toy benchmark shared by criteria 3, 5, 7 and 8

struct Bench {
  Dataset ds;
  LabelSpace space{6};
  PixelSegModel model;
  std::vector<AugmentedPair> pairs;
};

Bench make_bench(std::uint64_t seed, double label_noise) {
  ToyWorldConfig w;
  w.height = w.width = 32;
  w.train_size = 120;
  w.val_size = 24;
  w.test_size = 48;
  w.label_noise_rate = label_noise;
  Bench b;
  b.ds = synthesize_toy_dataset(w, seed);
  b.space = b.ds.label_space();
  PretrainConfig pc;
  pc.steps = 400;
  pc.seed = seed;
  pc.min_accuracy = 0.0;
  b.model = pretrain_toy_model(b.ds.split("train"), b.space, pc);
  const SyntheticBackend backend(w, 0.0);
  const PerfectOracle oracle;
  const PaletteNoveltyScorer scorer(backend.palette());
  b.ds.augmentation = augment_dataset(b.ds, backend, oracle, "perfect", scorer, 0.0, {}, seed + 100);
  b.pairs = b.ds.pairs();
  return b;
}

struct Trained {
  Checkpoint init, stage1, stage2;
};

Trained train(const Bench& b, std::uint64_t seed, bool learnable, ContrastiveKind loss, double ratio) {
  TrainConfig tc;
  tc.seed = seed;
  tc.learnable_head = learnable;
  tc.loss = loss;
  tc.selection_ratio = ratio;
  const TrainData data{&b.pairs, &b.ds.split("val_joint")};
  Trained t;
  t.init = make_initial_checkpoint(b.model, learnable);
  tc.steps = 1000;
  t.stage1 = run_stage1(t.init, data, tc, b.space);
  tc.steps = 1500;
  t.stage2 = run_stage2(t.stage1, data, tc, b.space);
  return t;
}

Verdict initialization_identity(const Bench& b) {
  TrainConfig tc;
  tc.steps = 0;
  const auto ck = run_stage1(make_initial_checkpoint(b.model), TrainData{&b.pairs, &b.ds.split("val_joint")}, tc, b.space);
  double worst = 0.0;
  for (const auto& e : b.ds.split("test_joint")) {
    const auto f = b.model.forward(e.sample.image);
    worst = std::max(worst, (anomaly_map(ck, f) + logsumexp_rows(f.logits)).cwiseAbs().maxCoeff());
  }
  // mask form: head initialised from a class head reproduces the adapted MSP of that class head
  Rng rng(303);
  double worst_mask = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto w_in = random_matrix(rng, 5, 4), q = random_matrix(rng, 6, 5), ml = random_matrix(rng, 6, 12, 2.0);
    const auto head = init_from_class_head(w_in, HeadMode::mask_msp, 4);
    const auto u = mask_msp_uncertainty({q, ml, 3, 4}, head);
    for (Eigen::Index p = 0; p < 12; ++p) {
      double best = -INFINITY;
      for (int c = 0; c < 4; ++c) {
        double s = 0.0;
        for (Eigen::Index m = 0; m < 6; ++m) {
          const Eigen::RowVectorXd z = q.row(m) * w_in;
          s += std::exp(z(c)) / z.array().exp().sum() / (1.0 + std::exp(-ml(m, p)));
        }
        best = std::max(best, s);
      }
      worst_mask = std::max(worst_mask, std::abs(u(p) - best));
    }
  }
  return {worst <= 1e-6 && worst_mask <= 1e-6,
          fmt("energy max |diff| %.2e over %zu images, adapted MSP max |diff| %.2e", worst, b.ds.split("test_joint").size(), worst_mask)};
}

Verdict loss_zero_region() {
  Rng rng(404);
  const Margins mg = Margins::pixel_defaults();
  bool ok = true;
  double min_perturbed = INFINITY;
  for (int t = 0; t < 100; ++t) {
    const auto ni = 2 + rng.below(5), na = 2 + rng.below(5), no = 1 + rng.below(4);
    auto in = to_vec(random_matrix(rng, static_cast<Eigen::Index>(ni), 1, 2));
    std::vector<std::pair<std::uint32_t, std::uint32_t>> valid;
    std::vector<double> aug(na);
    const double in_min = *std::min_element(in.begin(), in.end()), in_max = *std::max_element(in.begin(), in.end());
    for (std::uint32_t c = 0; c < na; ++c) {
      aug[c] = in_min - mg.lambda3 - rng.uniform();
      valid.emplace_back(c, static_cast<std::uint32_t>(rng.below(ni)));
    }
    std::vector<double> out(no);
    for (auto& o : out) o = in_max + mg.lambda1 + rng.uniform();
    const auto pairs = PairSampler(0, 1 << 20).sample(ni, na, no, valid);
    ok &= relative_contrastive_loss(in, aug, out, pairs, mg).value == 0.0;

    const double eps = 0.01 + rng.uniform();
    auto o1 = out;  // outlier too close to an inlier
    o1[0] = in[0] + mg.lambda1 - eps;
    auto o2 = out;  // outlier too close to an augmented inlier
    o2[0] = aug[0] + mg.lambda2 - eps;
    auto a3 = aug;  // augmented inlier not far enough below its pair
    a3[valid[0].first] = in[valid[0].second] - mg.lambda3 + eps;
    for (const double v : {relative_contrastive_loss(in, aug, o1, pairs, mg).value,
                           relative_contrastive_loss(in, aug, o2, pairs, mg).value,
                           relative_contrastive_loss(in, a3, out, pairs, mg).value}) {
      ok &= v > 0.0;
      min_perturbed = std::min(min_perturbed, v);
    }
  }
  return {ok, fmt("100 saturated instances give exactly 0; smallest perturbed loss %.3g", min_perturbed)};
}

Verdict selection_contract(const Bench& noisy, const Trained& trained) {
  Rng rng(505);
  bool ok = true;
  int draws = 0;
  for (double ratio : {0.6, 0.7, 0.8, 0.9, 1.0})
    for (int t = 0; t < 200; ++t, ++draws) {
      const auto n = 1 + rng.below(80);
      std::vector<double> loss(n);
      std::vector<std::uint8_t> elig(n);
      for (std::size_t i = 0; i < n; ++i) {
        loss[i] = t % 2 ? std::floor(rng.uniform() * 6.0) : rng.uniform();
        elig[i] = rng.bernoulli(0.8);
      }
      const auto m = build_selection_mask(loss, elig, ratio);
      const auto eligible = static_cast<double>(std::count(elig.begin(), elig.end(), 1));
      ok &= m.selected == static_cast<std::size_t>(std::ceil(ratio * eligible - 1e-9));
      double max_sel = -INFINITY, min_unsel = INFINITY;
      for (std::size_t i = 0; i < n; ++i) {
        if (!elig[i]) {
          ok &= !m.eta[i];
          continue;
        }
        (m.eta[i] ? max_sel : min_unsel) = m.eta[i] ? std::max(max_sel, loss[i]) : std::min(min_unsel, loss[i]);
      }
      ok &= max_sel <= min_unsel;
    }
  const auto& entries = noisy.ds.augmentation->entries;
  const auto at_start = measure_selection_recovery(trained.stage1, entries, noisy.space, 0.8, 4);
  const auto at_end = measure_selection_recovery(trained.stage2, entries, noisy.space, 0.8, 4);
  const double rec = std::min(at_start.recovery(), at_end.recovery());
  return {ok && rec >= 0.9,
          fmt("%d draws exact; corrupted-pixel recovery %.3f at stage-2 start, %.3f at end (%zu corrupted)", draws,
              at_start.recovery(), at_end.recovery(), at_start.corrupted)};
}

Verdict filter_efficacy() {
  ToyWorldConfig w;
  w.height = w.width = 32;
  const SyntheticBackend failing(w, 1.0), clean(w, 0.0);
  const PaletteNoveltyScorer scorer(clean.palette());
  const AppearanceOracle appearance;
  const PerfectOracle perfect;
  int rejected_fail = 0, rejected_clean = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(1000 + s);
    LabelMap l = layout_scene(w, rng);
    auto obj = make_ood_object(w.ood_shapes[rng.below(w.ood_shapes.size())],
                               static_cast<std::size_t>(w.ood_rate * w.height * w.width), rng);
    place_on_road(obj, w.height, w.width, rng);
    const auto label = paste_ood_mask(l, obj, w.label_space());
    const auto box = footprint_box(obj);
    const auto prompt = render_prompt(sample_prompt(rng));
    rejected_fail += !auto_filter(generate(label, prompt, failing, s), box, appearance, scorer).keep;
    rejected_clean += !auto_filter(generate(label, prompt, clean, s), box, perfect, scorer).keep;
  }
  return {rejected_fail >= 95 && rejected_clean <= 5,
          fmt("failure rate 1: %d/100 discarded; failure rate 0: %d/100 discarded", rejected_fail, rejected_clean)};
}

struct RegimeScores {
  double auroc_joint, miou_in, miou_cov, gap_out, gap_aug;
};

RegimeScores score(const Checkpoint& ck, const Bench& b) {
  const auto in = evaluate_entries(ck, b.ds.split("test_in"), b.space, "in");
  const auto cov = evaluate_entries(ck, b.ds.split("test_cov"), b.space, "cov");
  const auto joint = evaluate_entries(ck, b.ds.split("test_joint"), b.space, "joint");
  return {*joint.report.auroc, in.report.miou, cov.report.miou, joint.mean_out - in.mean_in, cov.mean_in - in.mean_in};
}

Verdict behavioral(const Bench& b, double secs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto t = train(b, 7, true, ContrastiveKind::relative, kDefaultSelectionRatio);
  const auto s0 = score(t.init, b), s1 = score(t.stage1, b), s2 = score(t.stage2, b);
  secs += seconds_since(t0);
  const bool a = s1.auroc_joint - s0.auroc_joint >= 0.05;
  const bool bb = s2.auroc_joint >= s1.auroc_joint && std::abs(s2.miou_cov - s0.miou_in) <= 0.05 &&
                  std::abs(s2.miou_cov - s2.miou_in) <= 0.05;
  const bool c = s2.gap_out > s2.gap_aug;
  return {a && bb && c && secs < 600.0,
          fmt("(a) joint AUROC %.3f -> %.3f %s; (b) stage 2 %.3f, cov mIoU %.3f vs clean %.3f/%.3f %s; "
              "(c) gap out-in %.2f vs aug-in %.2f %s; %.0fs",
              s0.auroc_joint, s1.auroc_joint, a ? "ok" : "FAIL", s2.auroc_joint, s2.miou_cov, s0.miou_in, s2.miou_in,
              bb ? "ok" : "FAIL", s2.gap_out, s2.gap_aug, c ? "ok" : "FAIL", secs)};
}

Verdict ablation_direction(const std::vector<const Bench*>& benches, const Trained& seed0_full) {
  bool ok = true;
  std::string detail;
  for (std::size_t s = 0; s < benches.size(); ++s) {
    const auto& b = *benches[s];
    const auto ap = [&](const Checkpoint& ck) { return *evaluate_entries(ck, b.ds.split("test_joint"), b.space, "joint").report.ap; };
    const double full = ap(s == 0 ? seed0_full.stage2 : train(b, s, true, ContrastiveKind::relative, 0.8).stage2);
    const double frozen = ap(train(b, s, false, ContrastiveKind::relative, 0.8).stage2);
    const double absolute = ap(train(b, s, true, ContrastiveKind::absolute, 0.8).stage2);
    const double nosel = ap(train(b, s, true, ContrastiveKind::relative, 1.0).stage2);
    const bool pass = frozen <= full + 0.01 && absolute <= full + 0.01 && nosel <= full + 0.01;
    ok &= pass;
    detail += fmt("%sseed %zu full %.3f frozen %.3f absolute %.3f no-select %.3f%s", s ? "; " : "", s, full, frozen,
                  absolute, nosel, pass ? "" : " (violated)");
  }
  return {ok, "joint AP " + detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism() {
  RunConfig cfg;
  for (auto [k, v] : std::initializer_list<std::pair<const char*, const char*>>{
           {"image-size", "32"}, {"train-size", "16"}, {"val-size", "6"}, {"test-size", "6"}, {"pretrain-steps", "100"},
           {"min-accuracy", "0"}, {"stage1-steps", "30"}, {"stage2-steps", "30"}, {"eval-every", "10"}, {"failure-rate", "0.3"},
           {"label-noise-rate", "0.1"}, {"seed", "5"}})
    cfg.set(k, v);
  std::ostringstream sink;
  const auto root = fs::temp_directory_path() / "segshift_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> ckpts;
  std::vector<std::vector<double>> numbers;
  for (int run = 0; run < 2; ++run) {
    const auto ds = build_dataset(cfg, sink);
    write_dataset(ds, root / std::to_string(run));
    const auto pre = pretrain_checkpoint(cfg, ds, sink);
    const auto r = train_both(pre, ds, cfg);
    ckpts.push_back(serialize_checkpoint(r.stage2));
    std::vector<double> nums;
    for (auto regime : kRegimes) {
      const auto rep = evaluate_entries(r.stage2, ds.split("test_" + std::string(regime)), ds.label_space(), std::string(regime)).report;
      for (auto v : {rep.auroc, rep.ap, rep.fpr95}) nums.push_back(v.value_or(0.0));
      nums.push_back(rep.miou);
      nums.push_back(rep.macc);
    }
    for (const auto& c : r.stage2.curve) nums.push_back(c.loss);
    numbers.push_back(nums);
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "0")) {
    if (!e.is_regular_file()) continue;
    ++files;
    differing += slurp(e.path()) != slurp(root / "1" / fs::relative(e.path(), root / "0"));
  }
  double worst = numbers[0].size() == numbers[1].size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(numbers[0].size(), numbers[1].size()); ++i)
    worst = std::max(worst, std::abs(numbers[0][i] - numbers[1][i]));
  fs::remove_all(root);
  return {differing == 0 && files > 0 && ckpts[0] == ckpts[1] && worst <= 1e-6,
          fmt("%zu dataset files, %zu differ; checkpoints %s; %zu numbers, max |diff| %.1e", files, differing,
              ckpts[0] == ckpts[1] ? "identical" : "DIFFER", numbers[0].size(), worst)};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, Verdict>> results;
  const auto report = [&](const std::string& name, Verdict v) {
    std::printf("criterion %zu %-26s %s  %s\n", results.size() + 1, name.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, std::move(v));
  };
  try {
    report("oracle-equivalence", oracle_equivalence());
    report("gradient-suite", gradient_suite());

    auto t0 = std::chrono::steady_clock::now();
    const auto clean = make_bench(7, 0.0);
    const double bench_secs = seconds_since(t0);
    report("initialization-identity", initialization_identity(clean));
    report("loss-zero-region", loss_zero_region());

    std::vector<Bench> noisy;
    for (std::uint64_t s = 0; s < 3; ++s) noisy.push_back(make_bench(s, 0.2));
    const auto seed0_full = train(noisy[0], 0, true, ContrastiveKind::relative, 0.8);
    report("selection-contract", selection_contract(noisy[0], seed0_full));
    report("filter-efficacy", filter_efficacy());
    report("behavioral-reproduction", behavioral(clean, bench_secs));
    report("ablation-directionality", ablation_direction({&noisy[0], &noisy[1], &noisy[2]}, seed0_full));
    report("determinism", determinism());
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second.pass; });
  std::printf("%zu/%zu criteria passed\n", results.size() - static_cast<std::size_t>(failed), results.size());
  return failed ? 1 : 0;
}
