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

// Subcommand bodies behind the CLI. Each returns a process exit code:
// 0 when every requested artifact was written and every metric is finite,
// kExitNonFinite otherwise. Invalid input surfaces as an exception.
//
// Output layout under the output root:
//   dataset/                    generate
//   pretrained.ckpt             train (or generate with --scorer model)
//   stage1.ckpt stage2.ckpt     train
//   stage{1,2}_curve.tsv        train
//   train_summary.json          train
//   eval/<checkpoint>/          evaluate
//   ablation/table.{tsv,md}     ablate
//   plots/*.svg                 plot
//   config.json                 every command (resolved configuration)

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segshift/augmentation.hpp"
#include "segshift/checkpoint.hpp"
#include "segshift/config.hpp"
#include "segshift/datakit.hpp"
#include "segshift/io.hpp"
#include "segshift/netpbm.hpp"
#include "segshift/plot.hpp"
#include "segshift/trainer.hpp"

namespace segshift {

inline constexpr int kExitNonFinite = 2;

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Shared building blocks

inline std::unique_ptr<SegmentationOracle> make_oracle(const RunConfig& cfg) {
  const auto& name = cfg.text("oracle");
  if (name == "perfect")
    return std::make_unique<PerfectOracle>(cfg.real("oracle-erosion"), derive_seed(cfg.integer("seed"), 0x0a));
  if (name == "appearance") return std::make_unique<AppearanceOracle>();
  throw ValidationError("unknown oracle '" + name + "' (known: perfect, appearance)");
}

/// Hash of everything the pretrained model depends on.
inline std::uint64_t pretrain_hash(const RunConfig& cfg) {
  const auto p = cfg.pretrain();
  std::ostringstream os;
  os.precision(17);
  os << to_json(cfg.world()).dump() << ";steps=" << p.steps << ";batch=" << p.batch_size << ";lr=" << p.learning_rate
     << ";seed=" << p.seed << ";features=" << p.shape.features;
  return fnv1a(os.str());
}

inline Checkpoint pretrain_checkpoint(const RunConfig& cfg, const Dataset& ds, std::ostream& log) {
  PretrainReport rep;
  const auto model = pretrain_toy_model(ds.split("train"), ds.label_space(), cfg.pretrain(), &rep);
  log << "pretrained: " << cfg.integer("pretrain-steps") << " steps, train pixel accuracy " << rep.accuracy << "\n";
  Checkpoint ck = make_initial_checkpoint(model, true);
  ck.config_hash = pretrain_hash(cfg);
  ck.metrics["train_accuracy"] = rep.accuracy;
  ck.metrics["final_loss"] = rep.final_loss;
  return ck;
}

/// Reuses <root>/pretrained.ckpt when it was produced under the same
/// configuration, otherwise pretrains and saves it.
inline Checkpoint obtain_pretrained(const RunConfig& cfg, const Dataset& ds, std::ostream& log) {
  const auto path = cfg.output_root() / "pretrained.ckpt";
  if (fs::exists(path)) {
    auto ck = load_checkpoint(path);
    if (ck.config_hash == pretrain_hash(cfg)) return ck;
    log << "pretrained.ckpt was produced under another configuration; retraining\n";
  }
  auto ck = pretrain_checkpoint(cfg, ds, log);
  save_checkpoint(path, ck);
  return ck;
}

/// Synthesises the benchmark and runs the augmentation pipeline in memory.
/// `pretrained` is only consulted by the model-backed filter scorer.
inline Dataset build_dataset(const RunConfig& cfg, std::ostream& log, const Checkpoint* pretrained = nullptr) {
  const auto world = cfg.world();
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  Dataset ds = synthesize_toy_dataset(world, seed);
  const double rho = cfg.real("failure-rate");
  const auto backend = make_backend(cfg.text("backend"), world, rho);
  const auto oracle = make_oracle(cfg);
  std::unique_ptr<UncertaintyScorer> scorer;
  std::optional<Checkpoint> own;
  if (cfg.text("scorer") == "palette") {
    scorer = std::make_unique<PaletteNoveltyScorer>(Palette(world));
  } else if (cfg.text("scorer") == "model") {
    if (!pretrained) {
      own = pretrain_checkpoint(cfg, ds, log);
      pretrained = &*own;
    }
    scorer = std::make_unique<ModelScorer>(*pretrained);
  } else {
    throw ValidationError("unknown scorer '" + cfg.text("scorer") + "' (known: palette, model)");
  }
  try {
    ds.augmentation = augment_dataset(ds, *backend, *oracle, cfg.text("oracle"), *scorer, rho, cfg.augmentation(),
                                      derive_seed(seed, fnv1a("augment")));
  } catch (const AugmentationFailure& e) {
    ds.augmentation = e.partial();
    throw;
  }
  return ds;
}

inline void write_config(const RunConfig& cfg) {
  io::write_file(cfg.output_root() / "config.json", cfg.to_json().dump(2) + "\n");
}

inline Dataset load_dataset_or_explain(const RunConfig& cfg) {
  const auto dir = cfg.dataset_dir();
  if (!fs::exists(dir / "manifest.json"))
    throw DatasetError("manifest", "no dataset at " + dir.string() + " (run `segshift generate` first or set --dataset)");
  return load_dataset(dir);
}

inline std::string curve_tsv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << std::setprecision(10) << "step\tloss\tl_unc\tl_seg_in\tl_seg_aug\n";
  for (const auto& p : curve) os << p.step << "\t" << p.loss << "\t" << p.l_unc << "\t" << p.l_seg_in << "\t" << p.l_seg_aug << "\n";
  return os.str();
}

inline std::vector<CurvePoint> read_curve_tsv(const fs::path& p) {
  std::istringstream in(io::read_file(p, p.filename().string()));
  std::string line;
  std::getline(in, line);
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    CurvePoint c;
    if (ls >> c.step >> c.loss >> c.l_unc >> c.l_seg_in >> c.l_seg_aug) out.push_back(c);
  }
  return out;
}

inline bool checkpoint_finite(const Checkpoint& ck) {
  for (const auto& [k, v] : ck.metrics)
    if (!std::isfinite(v)) return false;
  return ck.status == "ok";
}

// ---------------------------------------------------------------------------
// generate

inline int cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const auto dir = cfg.dataset_dir();
  // stale files from an earlier, larger run would survive otherwise
  if (fs::exists(dir / "manifest.json")) fs::remove_all(dir);
  write_config(cfg);
  Dataset ds;
  const bool needs_model = cfg.text("scorer") == "model";
  try {
    if (needs_model) {
      const Dataset clean = synthesize_toy_dataset(cfg.world(), static_cast<std::uint64_t>(cfg.integer("seed")));
      const auto pre = obtain_pretrained(cfg, clean, log);
      ds = build_dataset(cfg, log, &pre);
    } else {
      ds = build_dataset(cfg, log);
    }
  } catch (const AugmentationFailure& e) {
    Dataset partial = synthesize_toy_dataset(cfg.world(), static_cast<std::uint64_t>(cfg.integer("seed")));
    partial.augmentation = e.partial();
    write_dataset(partial, dir);
    log << "generation stopped at " << e.sample_id() << ": " << e.what() << "; partial manifest written to "
        << (dir / "manifest.json").string() << "\n";
    return 1;
  }
  write_dataset(ds, dir);
  const auto& a = *ds.augmentation;
  const auto kept = a.kept();
  std::size_t regen = 0;
  for (const auto& e : a.entries) regen += static_cast<std::size_t>(e.regenerations);
  log << "dataset written to " << dir.string() << "\n"
      << "augmented samples: " << a.entries.size() << ", kept " << kept << ", discarded " << a.entries.size() - kept
      << ", keep-rate " << (a.entries.empty() ? 0.0 : static_cast<double>(kept) / a.entries.size())
      << ", regenerations " << regen << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct StageRun {
  Checkpoint stage1;
  Checkpoint stage2;
};

/// Stage 1 followed by stage 2 from the pretrained checkpoint, in memory.
inline StageRun train_both(const Checkpoint& pretrained, const Dataset& ds, const RunConfig& cfg) {
  const auto pairs = ds.pairs();
  const TrainData data{&pairs, &ds.split("val_joint")};
  const auto space = ds.label_space();
  const auto c1 = cfg.train(Stage::stage1);
  StageRun r;
  r.stage1 = run_stage1(make_initial_checkpoint(pretrained.model, c1.learnable_head), data, c1, space);
  if (r.stage1.status != "ok") return r;
  r.stage2 = run_stage2(r.stage1, data, cfg.train(Stage::stage2), space);
  return r;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const auto& stage = cfg.text("stage");
  if (stage != "1" && stage != "2" && stage != "both") throw ValidationError("--stage must be 1, 2 or both");
  const Dataset ds = load_dataset_or_explain(cfg);
  if (!ds.augmentation) throw DatasetError("manifest", "dataset has no augmentation section; rerun `segshift generate`");
  if (!ds.augmentation->complete) log << "warning: dataset augmentation is incomplete; training on the kept part\n";
  write_config(cfg);
  const auto root = cfg.output_root();
  const auto space = ds.label_space();
  const auto pairs = ds.pairs();
  if (pairs.empty()) throw DatasetError("manifest", "no kept augmented samples to train on");
  const TrainData data{&pairs, &ds.split("val_joint")};

  nlohmann::json summary = nlohmann::json::object();
  bool finite = true;
  const auto record = [&](const std::string& name, const Checkpoint& ck) {
    save_checkpoint(root / (name + ".ckpt"), ck);
    io::write_file(root / (name + "_curve.tsv"), curve_tsv(ck.curve));
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : ck.metrics) m[k] = v;
    summary[name] = {{"status", ck.status}, {"step", ck.step}, {"config_hash", ck.config_hash}, {"metrics", m}};
    finite = finite && checkpoint_finite(ck);
    log << name << ": status " << ck.status << ", selected step " << ck.step << ", val AP "
        << ck.metrics.at("val_ap") << "\n";
  };

  std::optional<Checkpoint> s1;
  if (stage == "1" || stage == "both") {
    const auto pre = obtain_pretrained(cfg, ds, log);
    const auto c1 = cfg.train(Stage::stage1);
    s1 = run_stage1(make_initial_checkpoint(pre.model, c1.learnable_head), data, c1, space);
    record("stage1", *s1);
    if (s1->status != "ok") {
      io::write_file(root / "train_summary.json", summary.dump(2) + "\n");
      log << "stage 1 diverged; kept the last finite checkpoint\n";
      return kExitNonFinite;
    }
  }
  if (stage == "2" || stage == "both") {
    if (!s1) {
      const fs::path from = cfg.text("checkpoint").empty() ? root / "stage1.ckpt" : fs::path(cfg.text("checkpoint"));
      s1 = load_checkpoint(from);
    }
    record("stage2", run_stage2(*s1, data, cfg.train(Stage::stage2), space));
  }
  io::write_file(root / "train_summary.json", summary.dump(2) + "\n");
  return finite ? 0 : kExitNonFinite;
}

// ---------------------------------------------------------------------------
// evaluate

struct RegimeResult {
  EvalOutput out;
  const std::vector<DatasetEntry>* entries = nullptr;
};

inline nlohmann::json report_json(const MetricsReport& r, const EvalOutput& e) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json iou = nlohmann::json::array();
  for (double v : r.per_class_iou) iou.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  return {{"regime", r.regime},         {"images", r.images},
          {"pixels", r.pixels},         {"ood_pixels", r.ood_pixels},
          {"auroc", opt(r.auroc)},      {"ap", opt(r.ap)},
          {"fpr95", opt(r.fpr95)},      {"miou", r.miou},
          {"macc", r.macc},             {"pixel_accuracy", r.pixel_accuracy},
          {"per_class_iou", iou},       {"mean_score_in", e.mean_in},
          {"mean_score_out", std::isfinite(e.mean_out) ? nlohmann::json(e.mean_out) : nlohmann::json(nullptr)}};
}

inline fs::path default_checkpoint(const RunConfig& cfg) {
  if (!cfg.text("checkpoint").empty()) return cfg.text("checkpoint");
  for (const char* name : {"stage2.ckpt", "stage1.ckpt", "pretrained.ckpt"})
    if (fs::exists(cfg.output_root() / name)) return cfg.output_root() / name;
  throw Error("no checkpoint found under " + cfg.output_root().string() + " (run `segshift train` or set --checkpoint)");
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  const auto& split = cfg.text("eval-split");
  if (split != "test" && split != "val") throw ValidationError("--eval-split must be test or val");
  const auto ck_path = default_checkpoint(cfg);
  const Checkpoint ck = load_checkpoint(ck_path);
  const Dataset ds = load_dataset_or_explain(cfg);
  const auto space = ds.label_space();
  const auto dir = cfg.output_root() / "eval" / ck_path.stem();
  const bool dump = cfg.boolean("dump-maps");
  write_config(cfg);

  std::vector<RegimeResult> results;
  for (auto regime : kRegimes) {
    const auto& entries = ds.split(split + "_" + std::string(regime));
    results.push_back({evaluate_entries(ck, entries, space, std::string(regime), true), &entries});
  }

  nlohmann::json all = {{"checkpoint", ck_path.string()}, {"stage", ck.stage}, {"split", split}};
  nlohmann::json regimes = nlohmann::json::object();
  bool finite = true;
  for (const auto& r : results) {
    io::write_file(dir / ("report_" + r.out.report.regime + ".txt"), r.out.report.to_key_value());
    regimes[r.out.report.regime] = report_json(r.out.report, r.out);
    finite = finite && r.out.report.all_finite() && std::isfinite(r.out.mean_in);
    log << r.out.report.regime << ": mIoU " << r.out.report.miou;
    if (r.out.report.ap) log << ", AUROC " << *r.out.report.auroc << ", AP " << *r.out.report.ap << ", FPR95 " << *r.out.report.fpr95;
    log << "\n";
  }
  all["regimes"] = regimes;

  // score histogram of the joint regime, known vs OOD pixels
  std::vector<double> in_scores, out_scores;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.entries->size(); ++i) {
      const auto& m = r.out.maps[i];
      lo = std::min(lo, m.minCoeff()), hi = std::max(hi, m.maxCoeff());
      if (r.out.report.regime != "joint") continue;
      const auto& lab = (*r.entries)[i].sample.label.data;
      for (std::size_t p = 0; p < lab.size(); ++p) {
        if (space.is_known(lab[p])) in_scores.push_back(m(static_cast<Eigen::Index>(p)));
        else if (lab[p] == space.ood_id()) out_scores.push_back(m(static_cast<Eigen::Index>(p)));
      }
    }
  io::write_file(dir / "histogram_joint.svg",
                 plot::histogram_chart("anomaly score, joint regime (" + ck_path.stem().string() + ")",
                                       {"known pixels", "OOD pixels"}, {in_scores, out_scores}, 40, "anomaly score"));
  if (dump) {
    // one shared range, so maps are comparable across images
    for (const auto& r : results)
      for (std::size_t i = 0; i < r.entries->size(); ++i) {
        const auto& s = (*r.entries)[i].sample;
        const auto& m = r.out.maps[i];
        netpbm::Raster ras{s.label.width, s.label.height, 1, std::vector<std::uint8_t>(s.label.data.size())};
        for (std::size_t p = 0; p < ras.bytes.size(); ++p)
          ras.bytes[p] = hi > lo ? netpbm::quantize((m(static_cast<Eigen::Index>(p)) - lo) / (hi - lo)) : 0;
        io::write_file(dir / "maps" / (s.id + ".pgm"), netpbm::encode(ras));
      }
    all["map_range"] = {lo, hi};
  }
  io::write_file(dir / "report.json", all.dump(2) + "\n");
  log << "reports written to " << dir.string() << "\n";
  return finite ? 0 : kExitNonFinite;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string name;
  bool learnable_head = true;
  bool relative = true;
  bool selection = true;
  double margin_scale = 1.0;
  bool reuses_full = false;  // identical to grid row 0; its numbers are copied, not retrained
};

/// The 2^3 on/off grid followed by one row per margin scale.
inline std::vector<AblationRow> ablation_rows(const std::vector<double>& scales) {
  std::vector<AblationRow> rows;
  for (int m = 0; m < 8; ++m) {
    AblationRow r;
    r.learnable_head = !(m & 4);
    r.relative = !(m & 2);
    r.selection = !(m & 1);
    r.name = std::string(r.learnable_head ? "learnable" : "frozen") + "/" + (r.relative ? "relative" : "absolute") + "/" +
             (r.selection ? "select" : "no-select");
    rows.push_back(r);
  }
  for (double s : scales) {
    AblationRow r;
    r.margin_scale = s;
    r.reuses_full = s == 1.0;
    std::ostringstream os;
    os << "margins x" << s;
    r.name = os.str();
    rows.push_back(r);
  }
  return rows;
}

struct AblationCell {
  double ap = 0.0, auroc = 0.0, fpr95 = 0.0, miou_in = 0.0, miou_cov = 0.0, clean_ce = 0.0;
};

inline RunConfig ablation_config(RunConfig cfg, const AblationRow& row) {
  cfg.set("learnable-head", row.learnable_head ? "true" : "false");
  cfg.set("loss", row.relative ? "relative" : "absolute");
  if (!row.selection) cfg.set("selection-ratio", "1");
  std::ostringstream os;
  os.precision(17);
  for (const char* k : {"lambda1", "lambda2", "lambda3"}) {
    os.str("");
    os << cfg.real(k) * row.margin_scale;
    cfg.set(k, os.str());
  }
  return cfg;
}

/// Runs one row on an already built dataset; evaluates on the test splits.
inline AblationCell run_ablation_cell(const RunConfig& cfg, const Dataset& ds, const Checkpoint& pretrained) {
  const auto run = train_both(pretrained, ds, cfg);
  const Checkpoint& ck = run.stage1.status == "ok" ? run.stage2 : run.stage1;
  const auto space = ds.label_space();
  const auto joint = evaluate_entries(ck, ds.split("test_joint"), space, "joint");
  AblationCell c;
  c.ap = joint.report.ap.value_or(std::nan(""));
  c.auroc = joint.report.auroc.value_or(std::nan(""));
  c.fpr95 = joint.report.fpr95.value_or(std::nan(""));
  c.miou_in = evaluate_entries(ck, ds.split("test_in"), space, "in").report.miou;
  c.miou_cov = evaluate_entries(ck, ds.split("test_cov"), space, "cov").report.miou;
  c.clean_ce = ds.augmentation ? clean_cross_entropy(ck, ds.augmentation->entries, space) : std::nan("");
  return c;
}

inline int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  std::vector<double> scales;
  for (const auto& s : split_list(cfg.text("margin-scales"))) scales.push_back(std::stod(s));
  std::vector<long long> seeds;
  for (const auto& s : split_list(cfg.text("ablate-seeds"))) seeds.push_back(std::stoll(s));
  if (seeds.empty()) throw ValidationError("--ablate-seeds needs at least one seed");
  const auto rows = ablation_rows(scales);
  write_config(cfg);

  // cells[row][seed]
  std::vector<std::vector<AblationCell>> cells(rows.size());
  for (auto seed : seeds) {
    RunConfig sc = cfg;
    sc.set("seed", std::to_string(seed));
    log << "seed " << seed << ": building dataset\n";
    const Dataset ds = build_dataset(sc, log);
    const auto pre = pretrain_checkpoint(sc, ds, log);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      cells[r].push_back(rows[r].reuses_full ? cells[0].back() : run_ablation_cell(ablation_config(sc, rows[r]), ds, pre));
      log << "  " << rows[r].name << ": AP " << cells[r].back().ap << "\n";
    }
  }

  const auto mean = [](const std::vector<AblationCell>& v, double AblationCell::*f) {
    double s = 0.0;
    for (const auto& c : v) s += c.*f;
    return s / static_cast<double>(v.size());
  };
  std::ostringstream tsv, md;
  tsv << std::setprecision(10);
  md << std::fixed << std::setprecision(4);
  tsv << "row\tlearnable_head\tloss\tselection\tmargin_scale\tap\tauroc\tfpr95\tmiou_in\tmiou_cov\tclean_ce";
  for (auto s : seeds) tsv << "\tap_seed" << s;
  tsv << "\n";
  md << "| row | learnable head | loss | selection | margin scale | AP | AUROC | FPR95 | mIoU in | mIoU cov | clean CE |\n"
     << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  bool finite = true;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const double vals[] = {mean(cells[r], &AblationCell::ap),       mean(cells[r], &AblationCell::auroc),
                           mean(cells[r], &AblationCell::fpr95),    mean(cells[r], &AblationCell::miou_in),
                           mean(cells[r], &AblationCell::miou_cov), mean(cells[r], &AblationCell::clean_ce)};
    tsv << row.name << "\t" << row.learnable_head << "\t" << (row.relative ? "relative" : "absolute") << "\t"
        << row.selection << "\t" << row.margin_scale;
    md << "| " << row.name << " | " << (row.learnable_head ? "yes" : "no") << " | "
       << (row.relative ? "relative" : "absolute") << " | " << (row.selection ? "yes" : "no") << " | "
       << row.margin_scale;
    for (double v : vals) {
      tsv << "\t" << v;
      md << " | " << v;
      finite = finite && std::isfinite(v);
    }
    for (const auto& c : cells[r]) tsv << "\t" << c.ap;
    tsv << "\n";
    md << " |\n";
  }
  const auto dir = cfg.output_root() / "ablation";
  io::write_file(dir / "table.tsv", tsv.str());
  io::write_file(dir / "table.md", md.str());
  log << "ablation table written to " << (dir / "table.tsv").string() << "\n";
  return finite ? 0 : kExitNonFinite;
}

// ---------------------------------------------------------------------------
// plot

inline int cmd_plot(const RunConfig& cfg, std::ostream& log) {
  const auto root = cfg.output_root();
  const auto dir = root / "plots";
  int written = 0;
  for (const char* stage : {"stage1", "stage2"}) {
    const auto p = root / (std::string(stage) + "_curve.tsv");
    if (!fs::exists(p)) continue;
    const auto curve = read_curve_tsv(p);
    plot::Series total{"total", {}, {}}, unc{"L_unc", {}, {}}, seg_in{"L_seg in", {}, {}}, seg_aug{"L_seg aug", {}, {}};
    for (const auto& c : curve) {
      for (auto* s : {&total, &unc, &seg_in, &seg_aug}) s->x.push_back(static_cast<double>(c.step));
      total.y.push_back(c.loss);
      unc.y.push_back(c.l_unc);
      seg_in.y.push_back(c.l_seg_in);
      seg_aug.y.push_back(c.l_seg_aug);
    }
    std::vector<plot::Series> series{total, unc};
    if (std::string(stage) == "stage2") series.insert(series.end(), {seg_in, seg_aug});
    io::write_file(dir / (std::string(stage) + "_curve.svg"),
                   plot::line_chart(std::string(stage) + " training objective", series, "step", "loss"));
    ++written;
  }
  const auto table = root / "ablation" / "table.tsv";
  if (fs::exists(table)) {
    std::istringstream in(io::read_file(table, "ablation table"));
    std::string line;
    std::getline(in, line);
    std::vector<std::string> names;
    std::vector<double> aps;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::stringstream ls(line);
      std::string c;
      while (std::getline(ls, c, '\t')) cols.push_back(c);
      if (cols.size() < 6) continue;
      names.push_back(cols[0]);
      aps.push_back(std::stod(cols[5]));
    }
    io::write_file(dir / "ablation_ap.svg", plot::bar_chart("ablation: joint-regime AP", names, aps, "AP"));
    ++written;
  }
  if (written == 0) throw Error("nothing to plot under " + root.string() + " (run train or ablate first)");
  log << written << " plot(s) written to " << dir.string() << "\n";
  return 0;
}

}  // namespace segshift
