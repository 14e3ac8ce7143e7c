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

// Flat run configuration. Every key has a typed default; a JSON config file
// (flat object, dash-case keys) and `--key value` flags override it, in that
// order. Unknown keys are rejected.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segshift/augmentation.hpp"
#include "segshift/errors.hpp"
#include "segshift/io.hpp"
#include "segshift/toy_world.hpp"
#include "segshift/trainer.hpp"

namespace segshift {

enum class KeyType { integer, real, boolean, text };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
  using K = KeyType;
  static const std::vector<ConfigKey> keys = {
      // paths
      {"output-root", K::text, "runs", "directory for every artifact (env SEGSHIFT_OUTPUT_ROOT wins)"},
      {"dataset", K::text, "", "dataset directory (default <output-root>/dataset)"},
      {"checkpoint", K::text, "", "checkpoint to evaluate or resume from (default: latest stage)"},
      {"seed", K::integer, "0", "master seed"},
      // toy world
      {"num-classes", K::integer, "6", "known classes C"},
      {"image-size", K::integer, "64", "square image side (even)"},
      {"palette-seed", K::integer, "1", "class texture seed"},
      {"strength-cloudy", K::real, "1", "cloudy transform strength"},
      {"strength-rainy", K::real, "1", "rainy transform strength"},
      {"strength-snowy", K::real, "1", "snowy transform strength"},
      {"strength-foggy", K::real, "1", "foggy transform strength"},
      {"strength-night", K::real, "1", "night transform strength"},
      {"ood-shapes", K::text, "blob,polygon,silhouette", "OOD shape families"},
      {"train-size", K::integer, "200", "train images"},
      {"val-size", K::integer, "40", "validation images per regime"},
      {"test-size", K::integer, "80", "test images per regime"},
      {"ood-rate", K::real, "0.04", "pixel fraction of one pasted object"},
      {"label-noise-rate", K::real, "0", "planted label corruption in augmented labels"},
      {"separable", K::boolean, "false", "flat, well-separated class textures"},
      // augmentation
      {"backend", K::text, "synthetic", "generator backend"},
      {"failure-rate", K::real, "0", "synthetic generation failure rate"},
      {"max-retries", K::integer, "3", "regenerations per image after the first attempt"},
      {"objects-per-image", K::integer, "1", "OOD objects pasted per augmented image"},
      {"oracle", K::text, "appearance", "box-prompted segmenter: perfect|appearance"},
      {"oracle-erosion", K::real, "0", "perfect-oracle boundary erosion probability"},
      {"scorer", K::text, "palette", "filter uncertainty scorer: palette|model"},
      {"iou-threshold", K::real, "0.7", "filter IoU threshold"},
      {"unc-threshold-pct", K::real, "10", "filter uncertainty percentile threshold"},
      // pretraining
      {"pretrain-steps", K::integer, "600", "pretraining steps"},
      {"pretrain-lr", K::real, "0.003", "pretraining learning rate"},
      {"min-accuracy", K::real, "0.9", "required pretraining pixel accuracy"},
      {"features", K::integer, "16", "decoder feature channels F"},
      // two-stage training
      {"stage", K::text, "both", "1|2|both"},
      {"steps", K::integer, "-1", "steps for every stage run (-1: use stage1-steps/stage2-steps)"},
      {"stage1-steps", K::integer, "1000", "stage-1 steps"},
      {"stage2-steps", K::integer, "1500", "stage-2 steps"},
      {"batch-size", K::integer, "4", "pairs per step"},
      {"learning-rate", K::real, "0.001", "stage learning rate"},
      {"lambda1", K::real, "10", "margin outlier vs inlier"},
      {"lambda2", K::real, "5", "margin outlier vs augmented inlier"},
      {"lambda3", K::real, "5", "margin augmented vs inlier"},
      {"beta1", K::real, "50", "weight of the original-image segmentation loss"},
      {"beta2", K::real, "10", "weight of the augmented-image segmentation loss"},
      {"selection-ratio", K::real, "0.8", "kept fraction of augmented pixels"},
      {"pair-sample-k", K::integer, "4096", "pairs per contrastive term"},
      {"loss", K::text, "relative", "relative|absolute"},
      {"learnable-head", K::boolean, "true", "train a separate head (false: tie it to the classifier)"},
      {"eval-every", K::integer, "25", "validation cadence for model selection"},
      // evaluation / ablation
      {"eval-split", K::text, "test", "test|val"},
      {"dump-maps", K::boolean, "false", "write one uncertainty map per evaluated image"},
      {"ablate-seeds", K::text, "0", "comma-separated seeds for the ablation grid"},
      {"margin-scales", K::text, "0.1,1,10", "margin multipliers for the sweep"},
  };
  return keys;
}

inline const ConfigKey& find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ValidationError("unknown config key '" + name + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  /// Sets a key from text, validating the type.
  void set(const std::string& key, const std::string& value) {
    const auto& k = find_key(key);
    check_type(k, value);
    values_[key] = value;
  }

  void merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config file must hold a flat JSON object");
    for (const auto& [key, v] : j.items()) {
      std::string text;
      if (v.is_string()) text = v.get<std::string>();
      else if (v.is_boolean()) text = v.get<bool>() ? "true" : "false";
      else if (v.is_number_integer()) text = std::to_string(v.get<long long>());
      else if (v.is_number()) text = nlohmann::json(v).dump();
      else throw ValidationError("config key '" + key + "' must be a scalar");
      set(key, text);
    }
  }

  void merge_file(const std::filesystem::path& p) {
    try {
      merge_json(nlohmann::json::parse(io::read_file(p, p.string())));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("cannot parse config " + p.string() + ": " + e.what());
    }
  }

  const std::string& text(const std::string& key) const {
    find_key(key);
    return values_.at(key);
  }
  long long integer(const std::string& key) const { return std::stoll(text(key)); }
  double real(const std::string& key) const { return std::stod(text(key)); }
  bool boolean(const std::string& key) const { return text(key) == "true"; }

  /// Fully resolved configuration, typed, in key order.
  nlohmann::json to_json() const {
    nlohmann::ordered_json j;
    nlohmann::json out = nlohmann::json::object();
    for (const auto& k : config_keys()) {
      const auto& v = values_.at(k.name);
      switch (k.type) {
        case KeyType::integer: out[k.name] = std::stoll(v); break;
        case KeyType::real: out[k.name] = std::stod(v); break;
        case KeyType::boolean: out[k.name] = v == "true"; break;
        case KeyType::text: out[k.name] = v; break;
      }
    }
    return out;
  }

  std::filesystem::path output_root() const {
    if (const char* env = std::getenv("SEGSHIFT_OUTPUT_ROOT"); env && *env) return env;
    return text("output-root");
  }

  std::filesystem::path dataset_dir() const {
    return text("dataset").empty() ? output_root() / "dataset" : std::filesystem::path(text("dataset"));
  }

  ToyWorldConfig world() const {
    ToyWorldConfig w;
    w.num_classes = static_cast<int>(integer("num-classes"));
    w.height = w.width = static_cast<int>(integer("image-size"));
    w.palette_seed = static_cast<std::uint64_t>(integer("palette-seed"));
    w.strengths = {real("strength-cloudy"), real("strength-rainy"), real("strength-snowy"),
                   real("strength-foggy"), real("strength-night")};
    w.ood_shapes.clear();
    for (const auto& s : split_list(text("ood-shapes"))) w.ood_shapes.push_back(shape_family_from_string(s));
    w.train_size = static_cast<int>(integer("train-size"));
    w.val_size = static_cast<int>(integer("val-size"));
    w.test_size = static_cast<int>(integer("test-size"));
    w.ood_rate = real("ood-rate");
    w.label_noise_rate = real("label-noise-rate");
    w.separable = boolean("separable");
    w.validate();
    return w;
  }

  AugmentationOptions augmentation() const {
    AugmentationOptions o;
    o.objects_per_image = static_cast<int>(integer("objects-per-image"));
    o.max_retries = static_cast<int>(integer("max-retries"));
    o.thresholds = {real("iou-threshold"), real("unc-threshold-pct")};
    if (o.max_retries < 0) throw ValidationError("max-retries must be >= 0");
    return o;
  }

  PretrainConfig pretrain() const {
    PretrainConfig p;
    p.shape.features = static_cast<int>(integer("features"));
    p.shape.num_classes = static_cast<int>(integer("num-classes"));
    p.steps = static_cast<int>(integer("pretrain-steps"));
    p.batch_size = static_cast<int>(integer("batch-size"));
    p.learning_rate = real("pretrain-lr");
    p.seed = static_cast<std::uint64_t>(integer("seed"));
    p.min_accuracy = real("min-accuracy");
    return p;
  }

  TrainConfig train(Stage stage) const {
    TrainConfig t;
    t.stage = stage;
    t.margins = {real("lambda1"), real("lambda2"), real("lambda3")};
    t.weights = {real("beta1"), real("beta2")};
    t.selection_ratio = real("selection-ratio");
    t.pair_sample_k = static_cast<std::size_t>(integer("pair-sample-k"));
    t.learning_rate = real("learning-rate");
    const auto steps = integer("steps");
    t.steps = static_cast<int>(steps >= 0 ? steps : integer(stage == Stage::stage1 ? "stage1-steps" : "stage2-steps"));
    t.batch_size = static_cast<int>(integer("batch-size"));
    t.seed = static_cast<std::uint64_t>(integer("seed"));
    t.loss = contrastive_kind_from_string(text("loss"));
    t.learnable_head = boolean("learnable-head");
    t.eval_every = static_cast<int>(integer("eval-every"));
    t.validate();
    return t;
  }

 private:
  static void check_type(const ConfigKey& k, const std::string& v) {
    const auto bad = [&] { throw ValidationError("config key '" + k.name + "' expects " + type_name(k.type) + ", got '" + v + "'"); };
    try {
      std::size_t used = 0;
      switch (k.type) {
        case KeyType::integer: std::stoll(v, &used); if (used != v.size()) bad(); break;
        case KeyType::real: std::stod(v, &used); if (used != v.size()) bad(); break;
        case KeyType::boolean: if (v != "true" && v != "false") bad(); break;
        case KeyType::text: break;
      }
    } catch (const std::logic_error&) {
      bad();
    }
  }

  static std::string type_name(KeyType t) {
    switch (t) {
      case KeyType::integer: return "an integer";
      case KeyType::real: return "a number";
      case KeyType::boolean: return "true|false";
      case KeyType::text: return "text";
    }
    return "text";
  }

  std::map<std::string, std::string> values_;
};

}  // namespace segshift
