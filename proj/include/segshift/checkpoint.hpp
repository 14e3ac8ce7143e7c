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

// Checkpoint archive, all integers little-endian:
//
//   "SEGSHIFT"                     8 bytes
//   version                        u32 (= 1)
//   manifest length, manifest      u64, UTF-8 JSON
//   tensor count                   u32
//   per tensor: name length u32, name bytes, rows u32, cols u32,
//               rows * cols IEEE-754 f64, row-major
//
// The manifest holds step, stage, status, config hash, head mode, model
// shape and a metric snapshot.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "segshift/errors.hpp"
#include "segshift/io.hpp"
#include "segshift/netpbm.hpp"
#include "segshift/trainer.hpp"

namespace segshift {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'S', 'H', 'I', 'F', 'T'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : d_(data) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(d_[pos_ + k])) << (8 * k);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > d_.size()) throw Error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& d_;
  std::size_t pos_ = 0;
};

inline void put_tensor(std::string& out, const std::string& name, const Eigen::MatrixXd& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_u64(out, std::bit_cast<std::uint64_t>(m(i, j)));
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const auto& sh = ck.model.shape();
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : ck.metrics) metrics[k] = v;
  const nlohmann::json manifest = {
      {"step", ck.step},
      {"stage", ck.stage},
      {"status", ck.status},
      {"config_hash", ck.config_hash},
      {"head_mode", std::string(to_string(ck.head.mode))},
      {"head_tied", ck.head_tied},
      {"shape", {{"enc1", sh.enc1}, {"enc2", sh.enc2}, {"features", sh.features}, {"num_classes", sh.num_classes}}},
      {"metrics", metrics}};
  const std::string mtext = manifest.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, mtext.size());
  out += mtext;
  const auto& params = ck.model.params();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size() + 1));
  for (const auto& p : params) detail::put_tensor(out, p.name, p.value);
  detail::put_tensor(out, "head.weight", ck.head.weights);
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  detail::Reader r(data);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw Error("not a segshift checkpoint (bad magic)");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version) + " (supported: 1)");
  const auto mlen = r.uint(8);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(mlen)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  Checkpoint ck;
  ModelShape sh;
  try {
    const auto& s = m.at("shape");
    sh = {s.at("enc1").get<int>(), s.at("enc2").get<int>(), s.at("features").get<int>(), s.at("num_classes").get<int>()};
    ck.step = m.at("step").get<long>();
    ck.stage = m.at("stage").get<std::string>();
    ck.status = m.at("status").get<std::string>();
    ck.config_hash = m.at("config_hash").get<std::uint64_t>();
    ck.head.mode = head_mode_from_string(m.at("head_mode").get<std::string>());
    ck.head_tied = m.at("head_tied").get<bool>();
    for (const auto& [k, v] : m.at("metrics").items()) ck.metrics[k] = v.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint manifest field error: ") + e.what());
  }
  ck.model = PixelSegModel(sh, 0);
  auto& params = ck.model.params();
  const auto count = r.uint(4);
  if (count != params.size() + 1) throw Error("checkpoint tensor count does not match the model shape");
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::string name = r.bytes(static_cast<std::size_t>(r.uint(4)));
    const auto rows = static_cast<Eigen::Index>(r.uint(4));
    const auto cols = static_cast<Eigen::Index>(r.uint(4));
    Eigen::MatrixXd mat(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) mat(i, j) = std::bit_cast<double>(r.uint(8));
    if (t < params.size()) {
      if (name != params[t].name || rows != params[t].value.rows() || cols != params[t].value.cols())
        throw Error("checkpoint tensor '" + name + "' does not match the model layout");
      params[t].value = std::move(mat);
    } else {
      if (name != "head.weight") throw Error("checkpoint is missing the head tensor");
      ck.head.weights = std::move(mat);
    }
  }
  if (!r.done()) throw Error("trailing bytes after checkpoint tensors");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& p, const Checkpoint& ck) {
  io::write_file(p, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw Error("checkpoint not found: " + p.string());
  return deserialize_checkpoint(io::read_file(p, p.filename().string()));
}

}  // namespace segshift
