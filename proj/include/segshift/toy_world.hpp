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

// Procedural street-scene world used in place of real driving datasets:
// scene layouts, per-class textures, weather/time appearance transforms
// (covariate shift), and out-of-palette object shapes (semantic shift).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"
#include "segshift/rng.hpp"

namespace segshift {

enum class Weather { cloudy, rainy, snowy, foggy, clear };
enum class TimeOfDay { day, night };

inline constexpr std::array<Weather, 5> kAllWeather = {Weather::cloudy, Weather::rainy,
                                                       Weather::snowy, Weather::foggy,
                                                       Weather::clear};
inline constexpr std::array<TimeOfDay, 2> kAllTimes = {TimeOfDay::day, TimeOfDay::night};

inline std::string_view to_string(Weather w) {
  switch (w) {
    case Weather::cloudy: return "cloudy";
    case Weather::rainy: return "rainy";
    case Weather::snowy: return "snowy";
    case Weather::foggy: return "foggy";
    case Weather::clear: return "clear";
  }
  return "clear";
}

inline std::string_view to_string(TimeOfDay t) { return t == TimeOfDay::day ? "day" : "night"; }

inline Weather weather_from_string(std::string_view s) {
  for (auto w : kAllWeather)
    if (to_string(w) == s) return w;
  throw ValidationError("unknown weather '" + std::string(s) + "'");
}

inline TimeOfDay time_from_string(std::string_view s) {
  for (auto t : kAllTimes)
    if (to_string(t) == s) return t;
  throw ValidationError("unknown time of day '" + std::string(s) + "'");
}

/// Multipliers for each appearance transform; 0 disables it.
struct CovariateStrengths {
  double cloudy = 1.0;
  double rainy = 1.0;
  double snowy = 1.0;
  double foggy = 1.0;
  double night = 1.0;
};

enum class ShapeFamily { blob, polygon, silhouette };

inline std::string_view to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::blob: return "blob";
    case ShapeFamily::polygon: return "polygon";
    case ShapeFamily::silhouette: return "silhouette";
  }
  return "blob";
}

inline ShapeFamily shape_family_from_string(std::string_view s) {
  if (s == "blob") return ShapeFamily::blob;
  if (s == "polygon") return ShapeFamily::polygon;
  if (s == "silhouette") return ShapeFamily::silhouette;
  throw ValidationError("unknown OOD shape family '" + std::string(s) + "'");
}

struct ToyWorldConfig {
  int num_classes = 6;
  int height = 64;
  int width = 64;
  std::uint64_t palette_seed = 1;
  CovariateStrengths strengths;
  std::vector<ShapeFamily> ood_shapes = {ShapeFamily::blob, ShapeFamily::polygon,
                                         ShapeFamily::silhouette};
  int train_size = 200;
  int val_size = 40;
  int test_size = 80;
  double ood_rate = 0.04;          // pixel fraction covered by one pasted object
  double label_noise_rate = 0.0;   // corrupted fraction of augmented known pixels
  bool separable = false;          // flat, well-separated class textures

  void validate() const {
    if (num_classes < 2 || num_classes > 8) throw ValidationError("num_classes must be in [2, 8]");
    if (height < 8 || width < 8) throw ValidationError("image size must be at least 8x8");
    if (train_size < 1 || val_size < 1 || test_size < 1)
      throw ValidationError("split sizes must be at least 1");
    for (double s : {strengths.cloudy, strengths.rainy, strengths.snowy, strengths.foggy,
                     strengths.night})
      if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("covariate strengths must be >= 0");
    if (!(ood_rate > 0.0 && ood_rate < 0.5)) throw ValidationError("ood_rate must lie in (0, 0.5)");
    if (!(label_noise_rate >= 0.0 && label_noise_rate < 1.0))
      throw ValidationError("label_noise_rate must lie in [0, 1)");
    if (ood_shapes.empty()) throw ValidationError("at least one OOD shape family is required");
  }

  LabelSpace label_space() const { return LabelSpace(num_classes); }
};

enum class Pattern { noise, gradient, hstripes, checker, vstripes, diagonal };

struct Texture {
  std::array<double, 3> base{};
  Pattern pattern = Pattern::noise;
  double amplitude = 0.0;
  int period = 2;
  double noise = 0.02;
};

/// Scene element types; mapped onto known classes modulo C.
enum SceneKind : int { kRoad = 0, kSky, kBuilding, kCar, kPerson, kVegetation, kSign, kPole };

inline const char* const kClassNames[] = {"road", "sky",        "building", "car",
                                          "person", "vegetation", "sign",     "pole"};

/// Per-class textures plus the out-of-palette texture family for objects.
class Palette {
 public:
  explicit Palette(const ToyWorldConfig& cfg) : separable_(cfg.separable) {
    static constexpr std::array<std::array<double, 3>, 8> kBase = {{
        {0.42, 0.40, 0.43},  // road
        {0.55, 0.72, 0.92},  // sky
        {0.62, 0.46, 0.36},  // building
        {0.20, 0.26, 0.62},  // car
        {0.86, 0.62, 0.50},  // person
        {0.22, 0.55, 0.22},  // vegetation
        {0.90, 0.82, 0.20},  // sign
        {0.30, 0.30, 0.30},  // pole
    }};
    static constexpr std::array<std::array<double, 3>, 8> kSeparable = {{
        {0.5, 0.5, 0.5}, {0.1, 0.1, 0.9}, {0.9, 0.1, 0.1}, {0.1, 0.9, 0.1},
        {0.9, 0.9, 0.1}, {0.1, 0.9, 0.9}, {0.9, 0.1, 0.9}, {0.1, 0.1, 0.1},
    }};
    static constexpr std::array<Pattern, 8> kPattern = {Pattern::noise,    Pattern::gradient,
                                                        Pattern::hstripes, Pattern::checker,
                                                        Pattern::vstripes, Pattern::noise,
                                                        Pattern::diagonal, Pattern::vstripes};
    static constexpr std::array<double, 8> kAmp = {0.05, 0.10, 0.08, 0.06, 0.08, 0.10, 0.06, 0.05};
    Rng rng(derive_seed(cfg.palette_seed, 0x9a1e77e));
    for (int c = 0; c < cfg.num_classes; ++c) {
      Texture t;
      if (separable_) {
        t.base = kSeparable[c];
        t.pattern = Pattern::noise;
        t.amplitude = 0.0;
        t.noise = 0.005;
      } else {
        for (int k = 0; k < 3; ++k) t.base[k] = std::clamp(kBase[c][k] + rng.uniform(-0.03, 0.03), 0.0, 1.0);
        t.pattern = kPattern[c];
        t.amplitude = kAmp[c];
        t.period = 2 + static_cast<int>(rng.below(3));
        t.noise = 0.02;
      }
      classes_.push_back(t);
    }
  }

  const Texture& class_texture(int c) const { return classes_.at(static_cast<std::size_t>(c)); }
  int num_classes() const { return static_cast<int>(classes_.size()); }

  /// A random out-of-palette texture (saturated hues absent from the class
  /// palette, random pattern).
  Texture sample_ood_texture(Rng& rng) const {
    static constexpr std::array<std::array<double, 3>, 6> kOod = {{
        {0.85, 0.15, 0.75},  // magenta
        {0.98, 0.50, 0.05},  // orange
        {0.05, 0.88, 0.88},  // cyan
        {0.65, 0.98, 0.10},  // lime
        {0.50, 0.10, 0.85},  // purple
        {0.85, 0.05, 0.20},  // crimson
    }};
    Texture t;
    const auto& b = kOod[rng.below(kOod.size())];
    for (int k = 0; k < 3; ++k) t.base[k] = std::clamp(b[k] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    t.pattern = static_cast<Pattern>(rng.below(6));
    t.amplitude = separable_ ? 0.0 : rng.uniform(0.02, 0.10);
    t.period = 2 + static_cast<int>(rng.below(3));
    t.noise = separable_ ? 0.005 : 0.02;
    return t;
  }

  static Texture ignore_texture() { return Texture{{0.04, 0.04, 0.05}, Pattern::noise, 0.0, 2, 0.01}; }

 private:
  bool separable_;
  std::vector<Texture> classes_;
};

inline double pattern_value(const Texture& t, int y, int x, int height) {
  const int p = std::max(1, t.period);
  switch (t.pattern) {
    case Pattern::noise: return 0.0;
    case Pattern::gradient: return t.amplitude * (static_cast<double>(y) / std::max(1, height - 1) - 0.5);
    case Pattern::hstripes: return ((y / p) % 2 ? 1.0 : -1.0) * t.amplitude * 0.5;
    case Pattern::vstripes: return ((x / p) % 2 ? 1.0 : -1.0) * t.amplitude * 0.5;
    case Pattern::checker: return (((y / p) + (x / p)) % 2 ? 1.0 : -1.0) * t.amplitude * 0.5;
    case Pattern::diagonal: return (((y + x) / p) % 2 ? 1.0 : -1.0) * t.amplitude * 0.5;
  }
  return 0.0;
}

inline void paint_pixel(Image& img, int y, int x, const Texture& t, Rng& rng) {
  const double pat = pattern_value(t, y, x, img.height);
  const double n = t.noise > 0.0 ? rng.normal(0.0, t.noise) : 0.0;
  for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(t.base[c] + pat + n, 0.0, 1.0);
}

/// Replaces every OOD pixel by the class of its nearest known-class pixel
/// (multi-source BFS, 4-connectivity). Used to render generation failures
/// where the object blends into its surround.
inline LabelMap fill_ood_with_surround(const LabelMap& label, const LabelSpace& space) {
  LabelMap out = label;
  const int H = label.height, W = label.width;
  std::vector<int> dist(label.pixels(), -1);
  std::deque<int> q;
  for (int i = 0; i < static_cast<int>(label.pixels()); ++i) {
    if (!space.is_ood(label.data[i])) {
      dist[i] = 0;
      if (space.is_known(label.data[i])) q.push_back(i);
    }
  }
  while (!q.empty()) {
    const int i = q.front();
    q.pop_front();
    const int y = i / W, x = i % W;
    const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
    for (auto& n : nb) {
      if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
      const int j = n[0] * W + n[1];
      if (dist[j] != -1) continue;
      dist[j] = dist[i] + 1;
      out.data[j] = out.data[i];
      q.push_back(j);
    }
  }
  for (auto& v : out.data)
    if (space.is_ood(v)) v = 0;  // no known pixel anywhere
  return out;
}

/// Renders a label map under clear/day conditions. OOD pixels use
/// ood_texture; ignore pixels are near-black.
inline Image render_labels(const LabelMap& label, const Palette& palette, const LabelSpace& space,
                           const Texture& ood_texture, Rng& rng) {
  Image img(label.height, label.width);
  const Texture ignore = Palette::ignore_texture();
  for (int y = 0; y < label.height; ++y) {
    for (int x = 0; x < label.width; ++x) {
      const int v = label.at(y, x);
      const Texture& t = space.is_known(v) ? palette.class_texture(v)
                         : space.is_ood(v) ? ood_texture
                                           : ignore;
      paint_pixel(img, y, x, t, rng);
    }
  }
  return img;
}

/// Weather/time appearance transform. Labels are untouched; only pixel
/// values change. clear/day is the identity.
inline void apply_covariate(Image& img, Weather weather, TimeOfDay time,
                            const CovariateStrengths& s, Rng& rng) {
  const std::size_t P = img.pixels();
  const auto for_pixels = [&](auto&& f) {
    for (std::size_t p = 0; p < P; ++p) {
      std::array<double, 3> v{img.at(0, p), img.at(1, p), img.at(2, p)};
      f(v, p);
      for (int c = 0; c < 3; ++c) img.at(c, p) = std::clamp(v[c], 0.0, 1.0);
    }
  };
  switch (weather) {
    case Weather::clear:
      break;
    case Weather::cloudy: {
      const double k = std::min(1.0, 0.45 * s.cloudy);
      const double dim = std::max(0.0, 1.0 - 0.15 * s.cloudy);
      for_pixels([&](auto& v, std::size_t) {
        const double g = (v[0] + v[1] + v[2]) / 3.0;
        for (int c = 0; c < 3; ++c) v[c] = (v[c] + k * (g - v[c])) * dim;
      });
      break;
    }
    case Weather::rainy: {
      const double dim = std::max(0.0, 1.0 - 0.3 * s.rainy);
      const std::array<double, 3> tint{-0.02 * s.rainy, 0.0, 0.07 * s.rainy};
      std::vector<std::uint8_t> streak_col(static_cast<std::size_t>(img.width));
      for (auto& c : streak_col) c = rng.bernoulli(std::min(1.0, 0.12 * s.rainy));
      for_pixels([&](auto& v, std::size_t p) {
        const int x = static_cast<int>(p % img.width);
        const double streak = streak_col[x] && rng.bernoulli(0.6) ? 0.06 * s.rainy : 0.0;
        for (int c = 0; c < 3; ++c) v[c] = v[c] * dim + tint[c] + streak;
      });
      break;
    }
    case Weather::snowy: {
      const double k = std::min(1.0, 0.3 * s.snowy);
      const double speck = std::min(1.0, 0.02 * s.snowy);
      for_pixels([&](auto& v, std::size_t) {
        const bool flake = rng.bernoulli(speck);
        for (int c = 0; c < 3; ++c) {
          v[c] = v[c] + k * (0.92 - v[c]);
          if (flake) v[c] += 0.4 * (0.96 - v[c]);
        }
      });
      break;
    }
    case Weather::foggy: {
      const double k = std::min(1.0, 0.55 * s.foggy);
      for_pixels([&](auto& v, std::size_t) {
        for (int c = 0; c < 3; ++c) v[c] = v[c] + k * (0.78 - v[c]);
      });
      break;
    }
  }
  if (time == TimeOfDay::night) {
    const double dim = std::max(0.0, 1.0 - 0.6 * s.night);
    const std::array<double, 3> tint{0.0, 0.01 * s.night, 0.06 * s.night};
    for_pixels([&](auto& v, std::size_t) {
      for (int c = 0; c < 3; ++c) v[c] = v[c] * dim + tint[c];
    });
  }
}

/// Random street layout: sky, skyline of buildings, trees, road, cars,
/// pedestrians, and occasionally an ignore band at the bottom edge.
inline LabelMap layout_scene(const ToyWorldConfig& cfg, Rng& rng) {
  const int H = cfg.height, W = cfg.width, C = cfg.num_classes;
  const auto cls = [C](int kind) { return static_cast<std::uint8_t>(kind % C); };
  LabelMap l(H, W, cls(kRoad));
  const int horizon = static_cast<int>(std::lround(H * rng.uniform(0.38, 0.50)));
  // skyline
  int x = 0;
  while (x < W) {
    const int bw = std::max(2, static_cast<int>(W * rng.uniform(0.12, 0.28)));
    const int top = static_cast<int>(H * rng.uniform(0.08, 0.30));
    for (int xx = x; xx < std::min(W, x + bw); ++xx)
      for (int y = 0; y < horizon; ++y) l.at(y, xx) = y < top ? cls(kSky) : cls(kBuilding);
    x += bw;
  }
  // trees
  const int trees = rng.range(1, 2);
  for (int t = 0; t < trees; ++t) {
    const double r = H * rng.uniform(0.08, 0.14);
    const double cx = t == 0 ? W * rng.uniform(0.05, 0.35) : W * rng.uniform(0.65, 0.95);
    const double cy = horizon - r * 0.6;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        if ((y - cy) * (y - cy) + (xx - cx) * (xx - cx) <= r * r) l.at(y, xx) = cls(kVegetation);
  }
  // sign pole (only when those classes exist)
  if (C > kPole && rng.bernoulli(0.7)) {
    const int px = rng.range(2, W - 3);
    const int top = std::max(1, horizon - static_cast<int>(H * 0.25));
    for (int y = top; y < horizon + 2 && y < H; ++y) l.at(y, px) = cls(kPole);
    for (int y = top; y < top + 3; ++y)
      for (int xx = px - 2; xx <= px + 2; ++xx) l.at(y, xx) = cls(kSign);
  }
  // cars and pedestrians, sized by distance below the horizon
  const auto place_box = [&](int kind, double h_scale, double aspect) {
    const int bottom = rng.range(std::min(H - 1, horizon + 3), H - 1);
    const int bh = std::max(3, static_cast<int>((bottom - horizon) * h_scale) + 3);
    const int bw = std::max(2, static_cast<int>(bh * aspect));
    const int left = rng.range(0, std::max(0, W - bw));
    for (int y = std::max(0, bottom - bh + 1); y <= bottom; ++y)
      for (int xx = left; xx < std::min(W, left + bw); ++xx) l.at(y, xx) = cls(kind);
  };
  const int cars = rng.range(1, 2);
  for (int k = 0; k < cars; ++k) place_box(kCar, 0.45, 1.6);
  const int people = rng.range(0, 2);
  for (int k = 0; k < people; ++k) place_box(kPerson, 0.6, 0.35);
  // ego-vehicle band
  if (rng.bernoulli(0.5)) {
    const int rows = std::max(1, H / 32);
    for (int y = H - rows; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) l.at(y, xx) = static_cast<std::uint8_t>(kIgnoreId);
  }
  return l;
}

/// A pasteable object mask with its class name and paste position.
struct OodObjectMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  // row-major h x w, 1 = object
  std::string class_name;
  int anchor_row = 0;
  int anchor_col = 0;

  std::size_t area() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

inline std::span<const char* const> ood_class_names(ShapeFamily f) {
  static const char* const kBlob[] = {"rock", "debris", "tire"};
  static const char* const kPoly[] = {"crate", "box", "traffic cone"};
  static const char* const kSil[] = {"deer", "dog", "cow", "horse"};
  switch (f) {
    case ShapeFamily::blob: return kBlob;
    case ShapeFamily::polygon: return kPoly;
    case ShapeFamily::silhouette: return kSil;
  }
  return kBlob;
}

/// Generates an object of exactly `area` pixels: a scalar field is evaluated
/// over a box and its top-`area` pixels form the mask (ties by index).
inline OodObjectMask make_ood_object(ShapeFamily family, std::size_t area, Rng& rng) {
  if (area == 0) throw ValidationError("OOD object area must be positive");
  const double side = std::sqrt(static_cast<double>(area));
  const double aspect = family == ShapeFamily::silhouette ? rng.uniform(1.2, 1.6) : rng.uniform(0.8, 1.25);
  OodObjectMask obj;
  obj.width = std::max(2, static_cast<int>(std::ceil(side * 1.7 * std::sqrt(aspect))));
  obj.height = std::max(2, static_cast<int>(std::ceil(side * 1.7 / std::sqrt(aspect))));
  while (static_cast<std::size_t>(obj.width) * obj.height < area) {
    ++obj.width;
    ++obj.height;
  }
  const double cy = (obj.height - 1) / 2.0, cx = (obj.width - 1) / 2.0;
  const double sy = obj.height / 2.0, sx = obj.width / 2.0;
  std::vector<double> field(static_cast<std::size_t>(obj.width) * obj.height, 0.0);

  if (family == ShapeFamily::blob) {
    const int n = rng.range(3, 5);
    struct G { double y, x, s, w; };
    std::vector<G> gs;
    for (int k = 0; k < n; ++k)
      gs.push_back({cy + rng.uniform(-0.35, 0.35) * sy, cx + rng.uniform(-0.35, 0.35) * sx,
                    rng.uniform(0.3, 0.55) * std::min(sy, sx), rng.uniform(0.6, 1.0)});
    for (int y = 0; y < obj.height; ++y)
      for (int x = 0; x < obj.width; ++x) {
        double f = 0.0;
        for (const auto& g : gs)
          f += g.w * std::exp(-((y - g.y) * (y - g.y) + (x - g.x) * (x - g.x)) / (2 * g.s * g.s));
        field[static_cast<std::size_t>(y) * obj.width + x] = f;
      }
  } else if (family == ShapeFamily::polygon) {
    const int n = rng.range(3, 7);
    std::vector<std::array<double, 2>> v;
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    for (int k = 0; k < n; ++k) {
      const double a = phase + 2 * std::numbers::pi * k / n;
      const double r = rng.uniform(0.7, 1.0);
      v.push_back({cy + r * sy * std::sin(a), cx + r * sx * std::cos(a)});
    }
    const auto edge_dist = [&](int k, double y, double x) {
      const auto& a = v[k];
      const auto& b = v[(k + 1) % n];
      const double ey = b[0] - a[0], ex = b[1] - a[1];
      return ((x - a[1]) * ey - (y - a[0]) * ex) / std::max(std::hypot(ey, ex), 1e-9);
    };
    // orient so the centre is inside (positive)
    const double orient = edge_dist(0, cy, cx) >= 0 ? 1.0 : -1.0;
    for (int y = 0; y < obj.height; ++y)
      for (int x = 0; x < obj.width; ++x) {
        double f = 1e9;
        for (int k = 0; k < n; ++k) f = std::min(f, orient * edge_dist(k, y, x));
        field[static_cast<std::size_t>(y) * obj.width + x] = f;
      }
  } else {
    // body ellipse, head disc, four legs
    const double by = cy - 0.15 * sy, bx = cx, ry = 0.35 * sy, rx = 0.6 * sx;
    const double head_x = rng.bernoulli(0.5) ? cx + 0.7 * sx : cx - 0.7 * sx;
    const double head_y = cy - 0.5 * sy, hr = 0.25 * std::min(sy, sx);
    const double leg_top = by, leg_bot = cy + 0.95 * sy, leg_w = std::max(0.6, 0.08 * sx);
    const std::array<double, 4> legs{cx - 0.45 * sx, cx - 0.25 * sx, cx + 0.25 * sx, cx + 0.45 * sx};
    for (int y = 0; y < obj.height; ++y)
      for (int x = 0; x < obj.width; ++x) {
        double f = 1.0 - std::sqrt((y - by) * (y - by) / (ry * ry) + (x - bx) * (x - bx) / (rx * rx));
        f = std::max(f, 1.0 - std::hypot(y - head_y, x - head_x) / hr);
        if (y >= leg_top && y <= leg_bot)
          for (double lx : legs) f = std::max(f, 1.0 - std::abs(x - lx) / leg_w);
        field[static_cast<std::size_t>(y) * obj.width + x] = f;
      }
  }

  std::vector<std::uint32_t> idx(field.size());
  for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return field[a] > field[b]; });
  obj.mask.assign(field.size(), 0);
  for (std::size_t k = 0; k < area; ++k) obj.mask[idx[k]] = 1;
  const auto names = ood_class_names(family);
  obj.class_name = names[rng.below(names.size())];
  return obj;
}

/// Places the object so its footprint fits the image and it sits in the
/// lower (road) part of the frame when there is room.
inline void place_on_road(OodObjectMask& obj, int height, int width, Rng& rng) {
  if (obj.height > height || obj.width > width)
    throw ValidationError("OOD object larger than the image");
  const int lo_row = std::min(height - obj.height, height / 2 - obj.height / 2);
  obj.anchor_row = rng.range(std::max(0, lo_row), height - obj.height);
  obj.anchor_col = rng.range(0, width - obj.width);
}

}  // namespace segshift
