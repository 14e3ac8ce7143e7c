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

// Binary PPM (P6, RGB) and PGM (P5, gray) rasters, 8 bits per sample.
// Header is exactly "P6\n<W> <H>\n255\n" (or P5); pixel bytes follow in
// row-major order, RGB interleaved for P6.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "segshift/core_types.hpp"
#include "segshift/errors.hpp"
#include "segshift/io.hpp"

namespace segshift::netpbm {

struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

inline std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

inline double dequantize(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

/// Rounds every channel value to the nearest 8-bit level, so in-memory
/// images match what a save/load round trip produces.
inline void quantize_in_place(Image& img) {
  for (auto& v : img.data) v = dequantize(quantize(v));
}

inline std::string encode(const Raster& r) {
  std::string out = (r.channels == 3 ? "P6\n" : "P5\n") + std::to_string(r.width) + " " +
                    std::to_string(r.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(r.bytes.data()), r.bytes.size());
  return out;
}

/// Parses a P5/P6 raster. Throws DatasetError(id) on malformed or
/// truncated input.
inline Raster decode(const std::string& data, const std::string& id) {
  std::istringstream is(data);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  if (!(is >> magic >> w >> h >> maxval)) throw DatasetError(id, "malformed raster header");
  if (magic != "P5" && magic != "P6") throw DatasetError(id, "unsupported raster type " + magic);
  if (maxval != 255) throw DatasetError(id, "only 8-bit rasters are supported");
  if (w <= 0 || h <= 0) throw DatasetError(id, "raster has non-positive size");
  is.get();  // single whitespace after maxval
  Raster r;
  r.width = w;
  r.height = h;
  r.channels = magic == "P6" ? 3 : 1;
  const auto header = static_cast<std::size_t>(is.tellg());
  const std::size_t need = static_cast<std::size_t>(w) * h * r.channels;
  if (data.size() < header + need)
    throw DatasetError(id, "truncated raster: expected " + std::to_string(need) + " bytes, found " +
                               std::to_string(data.size() - header));
  r.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(header),
                 data.begin() + static_cast<std::ptrdiff_t>(header + need));
  return r;
}

inline Raster from_image(const Image& img) {
  Raster r{img.width, img.height, 3, {}};
  r.bytes.resize(img.pixels() * 3);
  for (std::size_t p = 0; p < img.pixels(); ++p)
    for (int c = 0; c < 3; ++c) r.bytes[p * 3 + c] = quantize(img.at(c, p));
  return r;
}

inline Image to_image(const Raster& r, const std::string& id) {
  if (r.channels != 3) throw DatasetError(id, "expected an RGB raster");
  Image img(r.height, r.width);
  for (std::size_t p = 0; p < img.pixels(); ++p)
    for (int c = 0; c < 3; ++c) img.at(c, p) = dequantize(r.bytes[p * 3 + c]);
  return img;
}

inline Raster from_labels(const LabelMap& l) { return {l.width, l.height, 1, l.data}; }

inline LabelMap to_labels(const Raster& r, const std::string& id) {
  if (r.channels != 1) throw DatasetError(id, "expected a single-channel label raster");
  LabelMap l(r.height, r.width);
  l.data = r.bytes;
  return l;
}

/// Grayscale map of arbitrary values, min-max normalised to [0, 255].
inline Raster from_scalar_map(const std::vector<double>& v, int height, int width) {
  Raster r{width, height, 1, std::vector<std::uint8_t>(v.size(), 0)};
  if (v.empty()) return r;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < v.size(); ++i)
    r.bytes[i] = span > 0 ? quantize((v[i] - *lo) / span) : 0;
  return r;
}

inline void save_image(const std::filesystem::path& p, const Image& img) {
  io::write_file(p, encode(from_image(img)));
}
inline void save_labels(const std::filesystem::path& p, const LabelMap& l) {
  io::write_file(p, encode(from_labels(l)));
}
inline Image load_image(const std::filesystem::path& p, const std::string& id) {
  return to_image(decode(io::read_file(p, id), id), id);
}
inline LabelMap load_labels(const std::filesystem::path& p, const std::string& id) {
  return to_labels(decode(io::read_file(p, id), id), id);
}

}  // namespace segshift::netpbm
