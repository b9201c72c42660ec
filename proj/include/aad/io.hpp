/* Copyright 2026 The AAD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// On-disk formats: checkpoints, embedding files, attention heatmaps and the
// append-only training log. Structured text is JSON; binary payloads are
// little-endian and row-major.

#ifndef AAD_IO_HPP_
#define AAD_IO_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aad/backbone.hpp"
#include "aad/datagen.hpp"
#include "aad/params.hpp"

namespace aad {

using json = nlohmann::json;

inline void to_json(json& j, const NetworkSpec& s) {
  json stages = json::array();
  for (const auto& st : s.stages)
    stages.push_back({{"in_channels", st.in_channels},
                      {"out_channels", st.out_channels},
                      {"downsample", st.downsample}});
  j = {{"stages", stages},
       {"input_channels", s.input_channels},
       {"input_size", s.input_size},
       {"embedding_dim", s.embedding_dim},
       {"attention_reinjection", s.attention_reinjection},
       {"attention_dropout", s.attention_dropout}};
}

inline void from_json(const json& j, NetworkSpec& s) {
  s.stages.clear();
  for (const auto& st : j.at("stages"))
    s.stages.push_back({st.at("in_channels").get<int>(), st.at("out_channels").get<int>(),
                        st.at("downsample").get<int>()});
  s.input_channels = j.at("input_channels").get<int>();
  s.input_size = j.at("input_size").get<int>();
  s.embedding_dim = j.at("embedding_dim").get<int>();
  s.attention_reinjection = j.value("attention_reinjection", false);
  s.attention_dropout = j.value("attention_dropout", 0.0);
  s.validate();
}

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else if constexpr (std::is_same_v<T, double>) return "float64";
  else return "unknown";
}

/// A module's name and its parameter set, as stored in a checkpoint.
template <typename T>
using NamedParams = std::vector<std::pair<std::string, ParamSet<T>*>>;
template <typename T>
using ConstNamedParams = std::vector<std::pair<std::string, const ParamSet<T>*>>;

/**
 * Checkpoint directory:
 *   manifest.json  caller metadata plus "dtype" and "modules": for each
 *                  module the values/buffers slot table (name, shape,
 *                  offset, size) and its checksum
 *   params.bin     for each module in order: values then buffers, raw
 */
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, json meta,
                     const ConstNamedParams<T>& modules) {
  std::filesystem::create_directories(dir);
  json mods = json::array();
  std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  std::uint64_t offset = 0;
  for (const auto& [name, ps] : modules) {
    json slots = json::array();
    for (const auto& s : ps->slots())
      slots.push_back({{"name", s.name},
                       {"shape", s.shape},
                       {"offset", s.offset},
                       {"size", s.size},
                       {"buffer", s.buffer}});
    mods.push_back({{"name", name},
                    {"blob_offset", offset},
                    {"values", ps->values().size()},
                    {"buffers", ps->buffers().size()},
                    {"checksum", ps->checksum()},
                    {"slots", slots}});
    blob.write(reinterpret_cast<const char*>(ps->values().data()),
               static_cast<std::streamsize>(ps->values().size() * sizeof(T)));
    blob.write(reinterpret_cast<const char*>(ps->buffers().data()),
               static_cast<std::streamsize>(ps->buffers().size() * sizeof(T)));
    offset += (ps->values().size() + ps->buffers().size()) * sizeof(T);
  }
  if (!blob) throw std::runtime_error("write failed: " + (dir / "params.bin").string());
  meta["dtype"] = dtype_name<T>();
  meta["modules"] = mods;
  detail::write_text(dir / "manifest.json", meta.dump(2) + "\n");
}

inline json read_checkpoint_manifest(const std::filesystem::path& dir) {
  return detail::read_json(dir / "manifest.json");
}

/// Loads stored parameters into freshly constructed modules of identical layout.
template <typename T>
json load_checkpoint(const std::filesystem::path& dir, const NamedParams<T>& modules) {
  json meta = read_checkpoint_manifest(dir);
  if (meta.value("dtype", "") != dtype_name<T>())
    throw InvalidInput("load_checkpoint: dtype mismatch in " + dir.string());
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read " + (dir / "params.bin").string());
  for (const auto& [name, ps] : modules) {
    const json* entry = nullptr;
    for (const auto& m : meta.at("modules"))
      if (m.at("name") == name) entry = &m;
    if (!entry) throw InvalidInput("load_checkpoint: module '" + name + "' missing");
    if ((*entry)["values"].get<std::size_t>() != ps->values().size() ||
        (*entry)["buffers"].get<std::size_t>() != ps->buffers().size() ||
        (*entry)["slots"].size() != ps->slots().size())
      throw InvalidInput("load_checkpoint: layout mismatch for module '" + name + "'");
    blob.seekg(static_cast<std::streamoff>((*entry)["blob_offset"].get<std::uint64_t>()));
    blob.read(reinterpret_cast<char*>(ps->values().data()),
              static_cast<std::streamsize>(ps->values().size() * sizeof(T)));
    blob.read(reinterpret_cast<char*>(ps->buffers().data()),
              static_cast<std::streamsize>(ps->buffers().size() * sizeof(T)));
    if (!blob) throw std::runtime_error("load_checkpoint: truncated params.bin");
    if (ps->checksum() != (*entry)["checksum"].get<std::uint64_t>())
      throw InvalidInput("load_checkpoint: checksum mismatch for module '" + name + "'");
  }
  return meta;
}

/**
 * Embedding file pair: <stem>.json header (count, dim, source, labels,
 * identities, ages) and <stem>.f32 with count x dim float32 values.
 */
struct EmbeddingFile {
  Matrix<float> embeddings;
  std::vector<int> labels;
  std::vector<int> identities;
  std::vector<float> ages;
  std::string source;
};

inline void save_embeddings(const std::filesystem::path& stem, const EmbeddingFile& e) {
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  json h = {{"format", "aad-embeddings-v1"},
            {"count", e.embeddings.rows()},
            {"dim", e.embeddings.cols()},
            {"source", e.source},
            {"labels", e.labels},
            {"identities", e.identities},
            {"ages", e.ages}};
  detail::write_text(stem.string() + ".json", h.dump() + "\n");
  detail::write_raw(stem.string() + ".f32",
                    std::span<const float>(e.embeddings.data(), e.embeddings.size()));
}

inline EmbeddingFile load_embeddings(const std::filesystem::path& stem) {
  const json h = detail::read_json(stem.string() + ".json");
  if (h.value("format", "") != "aad-embeddings-v1")
    throw InvalidInput("load_embeddings: unrecognized header " + stem.string());
  EmbeddingFile e;
  const auto count = h.at("count").get<Eigen::Index>(), dim = h.at("dim").get<Eigen::Index>();
  const auto raw = detail::read_raw<float>(stem.string() + ".f32",
                                           static_cast<std::size_t>(count * dim));
  e.embeddings = Eigen::Map<const Matrix<float>>(raw.data(), count, dim);
  e.labels = h.at("labels").get<std::vector<int>>();
  e.identities = h.value("identities", std::vector<int>{});
  e.ages = h.value("ages", std::vector<float>{});
  e.source = h.value("source", "");
  return e;
}

/// Writes sample `i` of a map as binary PGM (value = round(255 a)) plus a JSON sidecar.
template <typename T>
void export_heatmap(const std::filesystem::path& stem, const AttentionMap<T>& a, int i,
                    const std::string& source_checkpoint, int sample_index) {
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  std::ofstream f(stem.string() + ".pgm", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + stem.string() + ".pgm");
  f << "P5\n" << a.w << " " << a.h << "\n255\n";
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      const double v = std::clamp(static_cast<double>(a.at(i, y, x)), 0.0, 1.0);
      f.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  json side = {{"stage", a.stage_index},
               {"flavor", to_string(a.flavor)},
               {"source_checkpoint", source_checkpoint},
               {"sample", sample_index},
               {"height", a.h},
               {"width", a.w}};
  detail::write_text(stem.string() + ".json", side.dump(2) + "\n");
}

/// JSON-lines log, one record appended per event and also kept in memory.
/// Opening a path starts a fresh file.
class TrainingLog {
 public:
  TrainingLog() = default;
  explicit TrainingLog(const std::filesystem::path& path) : path_(path) {
    if (!path_.parent_path().empty()) std::filesystem::create_directories(path_.parent_path());
    out_.open(path_, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open log " + path_.string());
  }

  void append(json record) {
    if (out_.is_open()) out_ << record.dump() << "\n";
    records_.push_back(std::move(record));
  }

  void flush() {
    if (out_.is_open()) out_.flush();
  }

  const std::vector<json>& records() const { return records_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<json> records_;
};

}  // namespace aad

#endif  // AAD_IO_HPP_
