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

// Toy multi-shift benchmark synthesis and the on-disk dataset format
// (see docs/FORMAT.md).

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segshift/augmentation.hpp"
#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"
#include "segshift/io.hpp"
#include "segshift/netpbm.hpp"
#include "segshift/rng.hpp"
#include "segshift/toy_world.hpp"

namespace segshift {

inline constexpr int kFormatVersion = 1;
inline constexpr std::array<int, 1> kSupportedFormatVersions = {1};

/// Evaluation regimes of the benchmark, in report order.
inline constexpr std::array<std::string_view, 4> kRegimes = {"in", "cov", "sem", "joint"};

struct DatasetEntry {
  SegSample sample;
  std::uint64_t seed = 0;
  std::optional<PromptSpec> prompt;  // absent for clear/day renders
};

struct AugmentationEntry {
  std::string id;
  std::string source_id;  // id of the train sample it was derived from
  std::uint64_t seed = 0;
  PromptSpec prompt;
  bool keep = false;
  int regenerations = 0;
  std::vector<ObjectRecord> objects;
  std::size_t corrupted_pixels = 0;
  std::optional<SegSample> sample;       // kept entries only; label may carry planted noise
  std::optional<LabelMap> clean_label;   // kept entries only
};

struct AugmentationMeta {
  std::string backend = "synthetic";
  std::string oracle;
  double failure_rate = 0.0;
  std::uint64_t seed = 0;
  AugmentationOptions options;
  std::vector<AugmentationEntry> entries;
  bool complete = true;  // false when the backend failed part-way

  std::size_t kept() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.keep; }));
  }
};

struct Dataset {
  ToyWorldConfig world;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<DatasetEntry>> splits;
  std::optional<AugmentationMeta> augmentation;

  LabelSpace label_space() const { return world.label_space(); }

  const std::vector<DatasetEntry>& split(const std::string& name) const {
    const auto it = splits.find(name);
    if (it == splits.end()) throw DatasetError(name, "dataset has no split '" + name + "'");
    return it->second;
  }

  /// Original/augmented pairs of every kept augmentation entry, manifest order.
  std::vector<AugmentedPair> pairs() const {
    std::vector<AugmentedPair> out;
    if (!augmentation) return out;
    std::map<std::string, const SegSample*> train;
    for (const auto& e : split("train")) train[e.sample.id] = &e.sample;
    for (const auto& a : augmentation->entries) {
      if (!a.keep) continue;
      const auto it = train.find(a.source_id);
      if (it == train.end()) throw DatasetError(a.id, "augmentation source '" + a.source_id + "' not in train split");
      out.push_back(make_augmented_pair(*it->second, *a.sample, label_space()));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// JSON codecs

inline nlohmann::json to_json(const ToyWorldConfig& c) {
  nlohmann::json shapes = nlohmann::json::array();
  for (auto f : c.ood_shapes) shapes.push_back(std::string(to_string(f)));
  return {{"num_classes", c.num_classes},
          {"height", c.height},
          {"width", c.width},
          {"palette_seed", c.palette_seed},
          {"strengths",
           {{"cloudy", c.strengths.cloudy},
            {"rainy", c.strengths.rainy},
            {"snowy", c.strengths.snowy},
            {"foggy", c.strengths.foggy},
            {"night", c.strengths.night}}},
          {"ood_shapes", shapes},
          {"train_size", c.train_size},
          {"val_size", c.val_size},
          {"test_size", c.test_size},
          {"ood_rate", c.ood_rate},
          {"label_noise_rate", c.label_noise_rate},
          {"separable", c.separable}};
}

inline ToyWorldConfig world_from_json(const nlohmann::json& j) {
  ToyWorldConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.palette_seed = j.at("palette_seed").get<std::uint64_t>();
  const auto& s = j.at("strengths");
  c.strengths = {s.at("cloudy").get<double>(), s.at("rainy").get<double>(), s.at("snowy").get<double>(),
                 s.at("foggy").get<double>(), s.at("night").get<double>()};
  c.ood_shapes.clear();
  for (const auto& f : j.at("ood_shapes")) c.ood_shapes.push_back(shape_family_from_string(f.get<std::string>()));
  c.train_size = j.at("train_size").get<int>();
  c.val_size = j.at("val_size").get<int>();
  c.test_size = j.at("test_size").get<int>();
  c.ood_rate = j.at("ood_rate").get<double>();
  c.label_noise_rate = j.at("label_noise_rate").get<double>();
  c.separable = j.at("separable").get<bool>();
  return c;
}

inline nlohmann::json to_json(const PromptSpec& p) {
  nlohmann::json j = {{"place", p.place},
                      {"weather", std::string(to_string(p.weather))},
                      {"time", std::string(to_string(p.time))},
                      {"text", render_prompt(p)}};
  j["ood_class"] = p.ood_class ? nlohmann::json(*p.ood_class) : nlohmann::json(nullptr);
  return j;
}

inline PromptSpec prompt_from_json(const nlohmann::json& j) {
  PromptSpec p;
  p.place = j.at("place").get<std::string>();
  p.weather = weather_from_string(j.at("weather").get<std::string>());
  p.time = time_from_string(j.at("time").get<std::string>());
  if (!j.at("ood_class").is_null()) p.ood_class = j.at("ood_class").get<std::string>();
  return p;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace detail {

inline PromptSpec sample_shifted_prompt(Rng& rng) {
  PromptSpec p = sample_prompt(rng);
  while (p.weather == Weather::clear && p.time == TimeOfDay::day) {
    p.weather = kAllWeather[rng.below(kAllWeather.size())];
    p.time = kAllTimes[rng.below(kAllTimes.size())];
  }
  return p;
}

inline std::string sample_id(const std::string& split, int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", k);
  return split + "_" + buf;
}

}  // namespace detail

/// Emits the benchmark in memory: a clear/day train split and, for val and
/// test, four aligned splits per index k: in-domain, covariate-shifted (same
/// labels), semantic (OOD object pasted, clear/day) and joint (the semantic
/// labels under the covariate appearance).
inline Dataset synthesize_toy_dataset(const ToyWorldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.world = cfg;
  ds.seed = seed;
  const Palette palette(cfg);
  const LabelSpace space = cfg.label_space();
  const auto area = static_cast<std::size_t>(std::max(1L, std::lround(cfg.ood_rate * cfg.height * cfg.width)));

  auto& train = ds.splits["train"];
  for (int k = 0; k < cfg.train_size; ++k) {
    const auto s = derive_seed(seed, fnv1a("train"), static_cast<std::uint64_t>(k));
    Rng rng(s);
    LabelMap label = layout_scene(cfg, rng);
    Image img = render_labels(label, palette, space, palette.sample_ood_texture(rng), rng);
    netpbm::quantize_in_place(img);
    train.push_back({{detail::sample_id("train", k), std::move(img), std::move(label)}, s, std::nullopt});
  }

  for (const std::string part : {"val", "test"}) {
    const int n = part == "val" ? cfg.val_size : cfg.test_size;
    auto& in = ds.splits[part + "_in"];
    auto& cov = ds.splits[part + "_cov"];
    auto& sem = ds.splits[part + "_sem"];
    auto& joint = ds.splits[part + "_joint"];
    for (int k = 0; k < n; ++k) {
      const auto s = derive_seed(seed, fnv1a(part), static_cast<std::uint64_t>(k));
      Rng rng(s);
      const LabelMap label = layout_scene(cfg, rng);
      const PromptSpec shift = detail::sample_shifted_prompt(rng);
      const auto family = cfg.ood_shapes[rng.below(cfg.ood_shapes.size())];
      OodObjectMask obj = make_ood_object(family, area, rng);
      place_on_road(obj, cfg.height, cfg.width, rng);
      const LabelMap pasted = paste_ood_mask(label, obj, space);
      const Texture ood_tex = palette.sample_ood_texture(rng);

      // in and sem share the noise stream, so they differ only under the object
      Rng render_rng(derive_seed(s, 1));
      Image img_in = render_labels(label, palette, space, ood_tex, render_rng);
      netpbm::quantize_in_place(img_in);
      Rng sem_rng(derive_seed(s, 1));
      Image img_sem = render_labels(pasted, palette, space, ood_tex, sem_rng);
      netpbm::quantize_in_place(img_sem);

      Image img_cov = img_in;
      Rng cov_rng(derive_seed(s, 3));
      apply_covariate(img_cov, shift.weather, shift.time, cfg.strengths, cov_rng);
      netpbm::quantize_in_place(img_cov);
      Image img_joint = img_sem;
      Rng joint_rng(derive_seed(s, 3));
      apply_covariate(img_joint, shift.weather, shift.time, cfg.strengths, joint_rng);
      netpbm::quantize_in_place(img_joint);

      PromptSpec sem_prompt;
      sem_prompt.place = shift.place;
      sem_prompt.ood_class = obj.class_name;
      PromptSpec joint_prompt = shift;
      joint_prompt.ood_class = obj.class_name;

      in.push_back({{detail::sample_id(part + "_in", k), std::move(img_in), label}, s, std::nullopt});
      cov.push_back({{detail::sample_id(part + "_cov", k), std::move(img_cov), label}, s, shift});
      sem.push_back({{detail::sample_id(part + "_sem", k), std::move(img_sem), pasted}, s, sem_prompt});
      joint.push_back({{detail::sample_id(part + "_joint", k), std::move(img_joint), pasted}, s, joint_prompt});
    }
  }
  return ds;
}

/// Backend failure part-way through augment_dataset; carries the entries
/// finished before the failing one.
class AugmentationFailure : public DatasetError {
 public:
  AugmentationFailure(AugmentationMeta partial, const std::string& id, const std::string& what)
      : DatasetError(id, "generation failed: " + what), partial_(std::move(partial)) {}
  const AugmentationMeta& partial() const { return partial_; }

 private:
  AugmentationMeta partial_;
};

/// Runs paste -> generate -> filter -> regenerate over the train split and
/// plants label noise (world.label_noise_rate) in kept augmented labels.
/// Entry k uses the stream derive_seed(seed, k), so output does not depend
/// on processing order.
inline AugmentationMeta augment_dataset(const Dataset& ds, const GeneratorBackend& backend,
                                        const SegmentationOracle& oracle, std::string oracle_name,
                                        const UncertaintyScorer& scorer, double failure_rate,
                                        const AugmentationOptions& opt, std::uint64_t seed) {
  AugmentationMeta meta;
  meta.backend = std::string(backend.name());
  meta.oracle = std::move(oracle_name);
  meta.failure_rate = failure_rate;
  meta.seed = seed;
  meta.options = opt;
  const LabelSpace space = ds.label_space();
  const auto& train = ds.split("train");
  for (std::size_t k = 0; k < train.size(); ++k) {
    const auto s = derive_seed(seed, static_cast<std::uint64_t>(k));
    const std::string id = detail::sample_id("aug", static_cast<int>(k));
    AugmentationOutcome outcome;
    try {
      outcome = augment_sample(train[k].sample, ds.world, backend, oracle, scorer, opt, s, id);
    } catch (const std::exception& ex) {
      meta.complete = false;
      throw AugmentationFailure(std::move(meta), id, ex.what());
    }
    AugmentationEntry e;
    e.id = id;
    e.source_id = train[k].sample.id;
    e.seed = s;
    e.prompt = outcome.prompt;
    e.keep = outcome.keep;
    e.regenerations = outcome.regenerations;
    e.objects = std::move(outcome.objects);
    if (e.keep) {
      e.clean_label = outcome.sample.label;
      if (ds.world.label_noise_rate > 0.0) {
        Rng noise(derive_seed(s, 0x401));
        e.corrupted_pixels = corrupt_labels(outcome.sample.label, ds.world.label_noise_rate, space, noise);
      }
      e.sample = std::move(outcome.sample);
    }
    meta.entries.push_back(std::move(e));
  }
  return meta;
}

// ---------------------------------------------------------------------------
// Disk format

namespace detail {

inline std::string image_rel(const std::string& split, const std::string& id) {
  return "images/" + split + "/" + id + ".ppm";
}
inline std::string label_rel(const std::string& split, const std::string& id) {
  return "labels/" + split + "/" + id + ".pgm";
}

inline nlohmann::json object_json(const ObjectRecord& o) {
  return {{"class_name", o.class_name},
          {"box", {o.box.row, o.box.col, o.box.height, o.box.width}},
          {"keep", o.keep},
          {"iou", o.iou},
          {"percentile", o.percentile},
          {"diagnostic", o.diagnostic}};
}

inline ObjectRecord object_from_json(const nlohmann::json& j) {
  ObjectRecord o;
  o.class_name = j.at("class_name").get<std::string>();
  const auto& b = j.at("box");
  o.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
  o.keep = j.at("keep").get<bool>();
  o.iou = j.at("iou").get<double>();
  o.percentile = j.at("percentile").get<double>();
  o.diagnostic = j.at("diagnostic").get<std::string>();
  return o;
}

}  // namespace detail

inline nlohmann::json manifest_json(const Dataset& ds) {
  const LabelSpace space = ds.label_space();
  nlohmann::json names = nlohmann::json::array();
  for (int c = 0; c < space.num_known(); ++c) names.push_back(kClassNames[c]);
  nlohmann::json j = {{"format", "segshift-dataset"},
                      {"version", kFormatVersion},
                      {"label_space",
                       {{"num_known_classes", space.num_known()},
                        {"ood_id", space.ood_id()},
                        {"ignore_id", space.ignore_id()},
                        {"class_names", names}}},
                      {"seed", ds.seed},
                      {"world", to_json(ds.world)}};
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, entries] : ds.splits) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) {
      arr.push_back({{"id", e.sample.id},
                     {"image", detail::image_rel(name, e.sample.id)},
                     {"label", detail::label_rel(name, e.sample.id)},
                     {"seed", e.seed},
                     {"prompt", e.prompt ? to_json(*e.prompt) : nlohmann::json(nullptr)}});
    }
    splits[name] = arr;
  }
  j["splits"] = splits;
  if (ds.augmentation) {
    const auto& a = *ds.augmentation;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : a.entries) {
      nlohmann::json objs = nlohmann::json::array();
      for (const auto& o : e.objects) objs.push_back(detail::object_json(o));
      nlohmann::json r = {{"id", e.id},
                          {"source", e.source_id},
                          {"seed", e.seed},
                          {"prompt", to_json(e.prompt)},
                          {"keep", e.keep},
                          {"regenerations", e.regenerations},
                          {"objects", objs},
                          {"corrupted_pixels", e.corrupted_pixels}};
      if (e.keep) {
        r["image"] = detail::image_rel("aug", e.id);
        r["label"] = detail::label_rel("aug", e.id);
        r["clean_label"] = detail::label_rel("aug_clean", e.id);
      }
      arr.push_back(r);
    }
    j["augmentation"] = {{"backend", a.backend},
                         {"oracle", a.oracle},
                         {"failure_rate", a.failure_rate},
                         {"seed", a.seed},
                         {"objects_per_image", a.options.objects_per_image},
                         {"max_retries", a.options.max_retries},
                         {"iou_threshold", a.options.thresholds.iou},
                         {"uncertainty_threshold_pct", a.options.thresholds.uncertainty_pct},
                         {"complete", a.complete},
                         {"kept", a.kept()},
                         {"discarded", a.entries.size() - a.kept()},
                         {"entries", arr}};
  }
  return j;
}

/// Writes rasters first and the manifest last, so a manifest on disk only
/// references files that exist.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  for (const auto& [name, entries] : ds.splits)
    for (const auto& e : entries) {
      netpbm::save_image(root / detail::image_rel(name, e.sample.id), e.sample.image);
      netpbm::save_labels(root / detail::label_rel(name, e.sample.id), e.sample.label);
    }
  if (ds.augmentation)
    for (const auto& e : ds.augmentation->entries) {
      if (!e.keep) continue;
      netpbm::save_image(root / detail::image_rel("aug", e.id), e.sample->image);
      netpbm::save_labels(root / detail::label_rel("aug", e.id), e.sample->label);
      netpbm::save_labels(root / detail::label_rel("aug_clean", e.id), *e.clean_label);
    }
  io::write_file(root / "manifest.json", manifest_json(ds).dump(2) + "\n");
}

namespace detail {

inline SegSample load_checked(const std::filesystem::path& root, const std::string& id, const std::string& image,
                              const std::string& label, const LabelSpace& space) {
  SegSample s{id, netpbm::load_image(root / image, id), netpbm::load_labels(root / label, id)};
  const auto v = validate_sample(s, space);
  if (!v.empty()) throw DatasetError(id, v.front().message);
  return s;
}

}  // namespace detail

/// Loads a dataset directory, validating every sample against the label space.
inline Dataset load_dataset(const std::filesystem::path& root) {
  const auto mpath = root / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw DatasetError("manifest", "no manifest at " + mpath.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(mpath, "manifest"));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("manifest", std::string("malformed manifest: ") + e.what());
  }
  const int version = j.value("version", -1);
  if (std::find(kSupportedFormatVersions.begin(), kSupportedFormatVersions.end(), version) ==
      kSupportedFormatVersions.end()) {
    std::string supported;
    for (int v : kSupportedFormatVersions) supported += (supported.empty() ? "" : ", ") + std::to_string(v);
    throw DatasetError("manifest", "unsupported format version " + std::to_string(version) +
                                       " (supported: " + supported + ")");
  }
  Dataset ds;
  try {
    ds.world = world_from_json(j.at("world"));
    ds.seed = j.at("seed").get<std::uint64_t>();
    const auto& ls = j.at("label_space");
    const LabelSpace space(ls.at("num_known_classes").get<int>(), ls.at("ood_id").get<int>(),
                           ls.at("ignore_id").get<int>());
    if (!(space == ds.label_space())) throw DatasetError("manifest", "label space disagrees with world config");
    for (const auto& [name, arr] : j.at("splits").items()) {
      auto& out = ds.splits[name];
      for (const auto& e : arr) {
        const auto id = e.at("id").get<std::string>();
        DatasetEntry de;
        de.sample = detail::load_checked(root, id, e.at("image").get<std::string>(), e.at("label").get<std::string>(), space);
        de.seed = e.at("seed").get<std::uint64_t>();
        if (!e.at("prompt").is_null()) de.prompt = prompt_from_json(e.at("prompt"));
        out.push_back(std::move(de));
      }
    }
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      AugmentationMeta meta;
      meta.backend = a.at("backend").get<std::string>();
      meta.oracle = a.at("oracle").get<std::string>();
      meta.failure_rate = a.at("failure_rate").get<double>();
      meta.seed = a.at("seed").get<std::uint64_t>();
      meta.options.objects_per_image = a.at("objects_per_image").get<int>();
      meta.options.max_retries = a.at("max_retries").get<int>();
      meta.options.thresholds.iou = a.at("iou_threshold").get<double>();
      meta.options.thresholds.uncertainty_pct = a.at("uncertainty_threshold_pct").get<double>();
      meta.complete = a.value("complete", true);
      for (const auto& r : a.at("entries")) {
        AugmentationEntry e;
        e.id = r.at("id").get<std::string>();
        e.source_id = r.at("source").get<std::string>();
        e.seed = r.at("seed").get<std::uint64_t>();
        e.prompt = prompt_from_json(r.at("prompt"));
        e.keep = r.at("keep").get<bool>();
        e.regenerations = r.at("regenerations").get<int>();
        for (const auto& o : r.at("objects")) e.objects.push_back(detail::object_from_json(o));
        e.corrupted_pixels = r.at("corrupted_pixels").get<std::size_t>();
        if (e.keep) {
          e.sample = detail::load_checked(root, e.id, r.at("image").get<std::string>(), r.at("label").get<std::string>(), space);
          e.clean_label = netpbm::load_labels(root / r.at("clean_label").get<std::string>(), e.id);
        }
        meta.entries.push_back(std::move(e));
      }
      ds.augmentation = std::move(meta);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("manifest", std::string("manifest field error: ") + e.what());
  }
  return ds;
}

/// FNV-1a over image bytes (quantised) and label bytes, for golden files.
inline std::uint64_t sample_hash(const SegSample& s) {
  const auto r = netpbm::from_image(s.image);
  std::uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(r.bytes.data()), r.bytes.size()));
  return fnv1a(std::string_view(reinterpret_cast<const char*>(s.label.data.data()), s.label.data.size()), h);
}

}  // namespace segshift
