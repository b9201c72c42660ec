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

// Synthetic aged-glyph data.
//
// Each identity is a face-like glyph on a 32x32 canvas: a soft elliptical
// face region with eyes, brows, nose, mouth and a couple of marks, all
// placed and sized from the identity seed. Ageing thickens the strokes and
// adds wrinkle lines on the forehead, at the eye corners, under the eyes and
// along the cheeks. Every age effect only brightens pixels and grows with
// age, so the set of changed pixels (the deformation mask) is nested in age.
// The per-sample noise seed jitters wrinkle placement and onset; it never
// touches pixels outside the mask.

#ifndef AAD_DATAGEN_HPP_
#define AAD_DATAGEN_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad {

constexpr int kImageSize = 32;
constexpr int kImagePixels = kImageSize * kImageSize;

using Image = std::vector<double>;  // row-major kImageSize x kImageSize
using Mask = std::vector<std::uint8_t>;

struct Segment {
  double ax, ay, bx, by;
  double width;  // half-width of the stroke core
};

struct Blob {
  double cx, cy, rx, ry;
  double intensity;
};

struct Wrinkle {
  Segment seg;
  double onset;      // age at which the line starts to appear
  double amplitude;  // intensity at full expression
};

/// Identity-specific geometry plus its rendered base (age 0) image.
struct Glyph {
  std::uint64_t seed = 0;
  double cx = 16, cy = 16, face_a = 11, face_b = 13, face_level = 0.2;
  double eye_y = 12, eye_dx = 5;
  std::vector<Blob> blobs;        // eyes and marks
  std::vector<Segment> strokes;   // brows, nose, mouth
  Image image;
};

struct AgedImage {
  Image image;
  Mask mask;
};

namespace detail {

inline double segment_distance(double px, double py, const Segment& s) {
  const double vx = s.bx - s.ax, vy = s.by - s.ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - s.ax) * vx + (py - s.ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (s.ax + t * vx), dy = py - (s.ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

/// Unit-width linear ramp around the core: 1 inside, 0 beyond width + 0.5.
inline double stroke_profile(double d, double width) {
  return std::clamp(width + 0.5 - d, 0.0, 1.0);
}

inline double blob_profile(double px, double py, const Blob& b) {
  const double u = (px - b.cx) / b.rx, v = (py - b.cy) / b.ry;
  const double r = std::sqrt(u * u + v * v);
  return std::clamp((1.0 - r) * std::min(b.rx, b.ry) + 0.5, 0.0, 1.0);
}

inline constexpr double kStrokeGrowth = 0.9;  // extra half-width at age 1
inline constexpr double kWrinkleRamp = 0.35;  // age span from onset to full amplitude

inline Image render(const Glyph& g, double age, const std::vector<Wrinkle>& wrinkles) {
  Image img(kImagePixels, 0.0);
  const Blob face{g.cx, g.cy, g.face_a, g.face_b, g.face_level};
  const double grow = kStrokeGrowth * age;
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double v = face.intensity * blob_profile(px, py, face);
      for (const auto& b : g.blobs) v = std::max(v, b.intensity * blob_profile(px, py, b));
      for (const auto& s : g.strokes)
        v = std::max(v, 0.85 * stroke_profile(segment_distance(px, py, s), s.width + grow));
      if (age > 0.0) {
        double add = 0.0;
        for (const auto& w : wrinkles) {
          const double level = std::clamp((age - w.onset) / kWrinkleRamp, 0.0, 1.0);
          if (level <= 0.0) continue;
          add += w.amplitude * level * stroke_profile(segment_distance(px, py, w.seg), w.seg.width);
        }
        v = std::min(1.0, v + add);
      }
      img[y * kImageSize + x] = v;
    }
  return img;
}

inline std::vector<Wrinkle> make_wrinkles(const Glyph& g, std::uint64_t noise_seed) {
  Rng rng(mix_seed(noise_seed, 0x7772696e));
  std::vector<Wrinkle> out;
  auto add = [&](double ax, double ay, double bx, double by) {
    const double j = 0.6;
    Wrinkle w;
    w.seg = {ax + rng.uniform(-j, j), ay + rng.uniform(-j, j), bx + rng.uniform(-j, j),
             by + rng.uniform(-j, j), rng.uniform(0.15, 0.4)};
    w.onset = rng.uniform(0.0, 0.55);
    w.amplitude = rng.uniform(0.35, 0.55);
    out.push_back(w);
  };
  // Forehead lines between the top of the face and the brows.
  const double top = g.cy - g.face_b + 2.5;
  const double brow = g.eye_y - 3.5;
  const int lines = 3;
  for (int k = 0; k < lines; ++k) {
    const double y = top + (brow - 1.5 - top) * (k + 0.5) / lines;
    const double half = rng.uniform(3.5, 6.0);
    add(g.cx - half, y, g.cx + half, y + rng.uniform(-0.6, 0.6));
  }
  for (int side = -1; side <= 1; side += 2) {
    const double ex = g.cx + side * g.eye_dx;
    // Crow's feet at the outer eye corner.
    add(ex + side * 2.6, g.eye_y - 0.6, ex + side * 4.6, g.eye_y - 1.8);
    add(ex + side * 2.6, g.eye_y + 0.6, ex + side * 4.6, g.eye_y + 1.8);
    // Under-eye line.
    add(ex - 1.8, g.eye_y + 2.6, ex + 1.8, g.eye_y + 2.9);
    // Cheek fold from beside the nose towards the mouth corner.
    add(g.cx + side * 3.0, g.eye_y + 4.5, g.cx + side * 5.0, g.eye_y + 10.0);
  }
  return out;
}

}  // namespace detail

/// Base glyph for an identity seed; deterministic in the seed.
inline Glyph generate_identity(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x676c79));
  Glyph g;
  g.seed = seed;
  g.cx = 16.0 + rng.uniform(-1.0, 1.0);
  g.cy = 16.5 + rng.uniform(-1.0, 1.0);
  g.face_a = rng.uniform(10.0, 12.5);
  g.face_b = rng.uniform(12.0, 14.5);
  g.face_level = rng.uniform(0.15, 0.3);
  g.eye_y = g.cy - rng.uniform(2.5, 4.5);
  g.eye_dx = rng.uniform(4.0, 6.5);
  const double eye_rx = rng.uniform(1.3, 2.4), eye_ry = rng.uniform(0.9, 1.6);
  for (int side = -1; side <= 1; side += 2)
    g.blobs.push_back({g.cx + side * g.eye_dx, g.eye_y, eye_rx, eye_ry, 0.9});
  // Brows.
  const double brow_dy = rng.uniform(2.5, 3.5), brow_len = rng.uniform(3.0, 5.0);
  const double tilt = rng.uniform(-0.5, 0.5), brow_w = rng.uniform(0.2, 0.55);
  for (int side = -1; side <= 1; side += 2) {
    const double x0 = g.cx + side * (g.eye_dx - brow_len / 2), x1 = g.cx + side * (g.eye_dx + brow_len / 2);
    const double y = g.eye_y - brow_dy;
    g.strokes.push_back({x0, y, x1, y - side * side * tilt, brow_w});
  }
  // Nose.
  const double nose_x = g.cx + rng.uniform(-1.0, 1.0), nose_len = rng.uniform(4.5, 7.0);
  const double nose_w = rng.uniform(0.2, 0.5);
  const double nose_tip = g.eye_y + 1.0 + nose_len;
  g.strokes.push_back({nose_x, g.eye_y + 1.0, nose_x + rng.uniform(-1.0, 1.0), nose_tip, nose_w});
  g.strokes.push_back({nose_x - rng.uniform(0.8, 2.0), nose_tip, nose_x + rng.uniform(0.8, 2.0),
                       nose_tip, nose_w});
  // Mouth as a two-segment arc.
  const double mouth_y = std::min(g.cy + g.face_b - 3.0, nose_tip + rng.uniform(2.5, 4.0));
  const double half = rng.uniform(2.5, 4.5), curve = rng.uniform(-1.5, 1.5);
  const double mouth_w = rng.uniform(0.3, 0.65);
  g.strokes.push_back({g.cx - half, mouth_y, g.cx, mouth_y + curve, mouth_w});
  g.strokes.push_back({g.cx, mouth_y + curve, g.cx + half, mouth_y, mouth_w});
  // Identity marks inside the face.
  for (int k = 0; k < 2; ++k) {
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double rad = rng.uniform(0.3, 0.75);
    g.blobs.push_back({g.cx + rad * g.face_a * std::cos(ang), g.cy + rad * g.face_b * std::sin(ang),
                       rng.uniform(0.6, 1.2), rng.uniform(0.6, 1.2), rng.uniform(0.5, 0.8)});
  }
  g.image = detail::render(g, 0.0, {});
  return g;
}

/**
 * Ages a glyph. Age 0 returns the base image and an empty mask; the mask
 * marks pixels where |aged - base| > 1e-6.
 */
inline AgedImage apply_age(const Glyph& g, double age, std::uint64_t noise_seed) {
  if (!(age >= 0.0 && age <= 1.0))
    throw InvalidInput("apply_age: age " + std::to_string(age) + " outside [0, 1]");
  AgedImage out;
  out.mask.assign(kImagePixels, 0);
  if (age == 0.0) {
    out.image = g.image;
    return out;
  }
  out.image = detail::render(g, age, detail::make_wrinkles(g, noise_seed));
  for (int k = 0; k < kImagePixels; ++k)
    out.mask[k] = std::abs(out.image[k] - g.image[k]) > 1e-6 ? 1 : 0;
  return out;
}

enum class Split { recognition_train, age_train, eval };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::recognition_train: return "recognition_train";
    case Split::age_train: return "age_train";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "recognition_train") return Split::recognition_train;
  if (s == "age_train") return Split::age_train;
  if (s == "eval") return Split::eval;
  throw ConfigError("unknown split '" + s + "'");
}

struct DatasetManifest {
  Split split = Split::recognition_train;
  int identities = 100;
  int samples_per_identity = 20;
  double age_min = 0.0;
  double age_max = 1.0;
  std::uint64_t seed = 0;
  /// Global identity ids are [identity_offset, identity_offset + identities + distractors).
  int identity_offset = 0;
  /// Extra single-sample identities with label -1 (eval split only).
  int distractors = 0;

  int first_identity() const { return identity_offset; }
  int end_identity() const { return identity_offset + identities + distractors; }
  int sample_count() const { return identities * samples_per_identity + distractors; }

  void validate() const {
    if (identities < 1 || samples_per_identity < 1)
      throw ConfigError("DatasetManifest: identities and samples_per_identity must be >= 1");
    if (!(age_min >= 0.0 && age_max <= 1.0 && age_min <= age_max))
      throw ConfigError("DatasetManifest: age range must satisfy 0 <= min <= max <= 1");
    if (distractors < 0 || identity_offset < 0)
      throw ConfigError("DatasetManifest: negative counts");
    if (distractors > 0 && split != Split::eval)
      throw ConfigError("DatasetManifest: distractors only belong to the eval split");
  }
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = {{"split", to_string(m.split)},
       {"identities", m.identities},
       {"samples_per_identity", m.samples_per_identity},
       {"age_range", {m.age_min, m.age_max}},
       {"seed", m.seed},
       {"identity_offset", m.identity_offset},
       {"distractors", m.distractors}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.split = parse_split(j.at("split").get<std::string>());
  m.identities = j.value("identities", m.identities);
  m.samples_per_identity = j.value("samples_per_identity", m.samples_per_identity);
  if (j.contains("age_range")) {
    m.age_min = j["age_range"].at(0).get<double>();
    m.age_max = j["age_range"].at(1).get<double>();
  }
  m.seed = j.value("seed", m.seed);
  m.identity_offset = j.value("identity_offset", m.identity_offset);
  m.distractors = j.value("distractors", m.distractors);
}

/// Rejects identity overlap between any two manifests.
inline void check_disjoint(const std::vector<DatasetManifest>& manifests) {
  for (std::size_t a = 0; a < manifests.size(); ++a)
    for (std::size_t b = a + 1; b < manifests.size(); ++b) {
      const auto& x = manifests[a];
      const auto& y = manifests[b];
      if (x.first_identity() < y.end_identity() && y.first_identity() < x.end_identity())
        throw InvalidInput(std::string("dataset splits ") + to_string(x.split) + " and " +
                           to_string(y.split) + " share identities");
    }
}

struct Dataset {
  DatasetManifest manifest;
  Tensor<float> images;             // count x 1 x 32 x 32
  std::vector<std::uint8_t> masks;  // count x 32 x 32
  std::vector<int> labels;          // class index within the split, -1 for distractors
  std::vector<int> identities;      // global identity id
  std::vector<float> ages;
  std::vector<std::uint64_t> noise_seeds;

  int size() const { return static_cast<int>(labels.size()); }

  /// Images at the given indices as an (indices.size() x 1 x 32 x 32) batch.
  template <typename T = float>
  Tensor<T> batch(std::span<const int> indices) const {
    Tensor<T> out(static_cast<int>(indices.size()), 1, kImageSize, kImageSize);
    for (std::size_t q = 0; q < indices.size(); ++q) {
      const float* src = images.data.data() + static_cast<std::size_t>(indices[q]) * kImagePixels;
      std::copy(src, src + kImagePixels, out.data.begin() + q * kImagePixels);
    }
    return out;
  }
};

inline std::uint64_t identity_seed(std::uint64_t dataset_seed, int global_identity) {
  return mix_seed(dataset_seed, 0x1d000000ULL + static_cast<std::uint64_t>(global_identity));
}

inline std::uint64_t sample_noise_seed(std::uint64_t dataset_seed, int global_identity, int k) {
  return mix_seed(identity_seed(dataset_seed, global_identity), 0x5a000000ULL + k);
}

/**
 * Generates every sample of a split. Ages are stratified: sample k of an
 * identity is drawn uniformly from the k-th of samples_per_identity equal
 * sub-ranges of [age_min, age_max]. Samples are a pure function of
 * (seed, identity, k), so generation order does not matter.
 */
inline Dataset build_dataset(const DatasetManifest& manifest,
                             const std::vector<DatasetManifest>& others = {}) {
  manifest.validate();
  std::vector<DatasetManifest> all = others;
  all.push_back(manifest);
  check_disjoint(all);

  Dataset ds;
  ds.manifest = manifest;
  const int count = manifest.sample_count();
  ds.images = Tensor<float>(count, 1, kImageSize, kImageSize);
  ds.masks.assign(static_cast<std::size_t>(count) * kImagePixels, 0);
  auto emit = [&](int slot, int label, int gid, double age, std::uint64_t noise,
                  const Glyph& g) {
    const AgedImage a = apply_age(g, age, noise);
    std::copy(a.image.begin(), a.image.end(),
              ds.images.data.begin() + static_cast<std::size_t>(slot) * kImagePixels);
    std::copy(a.mask.begin(), a.mask.end(),
              ds.masks.begin() + static_cast<std::size_t>(slot) * kImagePixels);
    ds.labels.push_back(label);
    ds.identities.push_back(gid);
    ds.ages.push_back(static_cast<float>(age));
    ds.noise_seeds.push_back(noise);
  };
  const double span = manifest.age_max - manifest.age_min;
  int slot = 0;
  for (int id = 0; id < manifest.identities; ++id) {
    const int gid = manifest.identity_offset + id;
    const Glyph g = generate_identity(identity_seed(manifest.seed, gid));
    for (int k = 0; k < manifest.samples_per_identity; ++k) {
      const std::uint64_t noise = sample_noise_seed(manifest.seed, gid, k);
      Rng arng(mix_seed(noise, 0x616765));
      const double age =
          manifest.age_min + span * (k + arng.uniform()) / manifest.samples_per_identity;
      emit(slot++, id, gid, std::clamp(age, 0.0, 1.0), noise, g);
    }
  }
  for (int d = 0; d < manifest.distractors; ++d) {
    const int gid = manifest.identity_offset + manifest.identities + d;
    const Glyph g = generate_identity(identity_seed(manifest.seed, gid));
    const std::uint64_t noise = sample_noise_seed(manifest.seed, gid, 0);
    Rng arng(mix_seed(noise, 0x616765));
    emit(slot++, -1, gid, manifest.age_min + span * arng.uniform(), noise, g);
  }
  return ds;
}

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "archive I/O writes host-order little-endian data");

template <typename U>
void write_raw(const std::filesystem::path& p, std::span<const U> v) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

template <typename U>
std::vector<U> read_raw(const std::filesystem::path& p, std::size_t count) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::vector<U> v(count);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(U)));
  if (f.gcount() != static_cast<std::streamsize>(count * sizeof(U)))
    throw std::runtime_error("truncated file: " + p.string());
  return v;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  return nlohmann::json::parse(f);
}

}  // namespace detail

/**
 * Archive layout (all binary files little-endian, row-major):
 *   manifest.json   manifest fields + "format", "count", "image_size"
 *   images.f32      count x 32 x 32 float32 in [0, 1]
 *   masks.u8        count x 32 x 32 uint8 in {0, 1}
 *   labels.i32      count int32 class labels (-1 = distractor)
 *   identities.i32  count int32 global identity ids
 *   ages.f32        count float32
 *   noise.u64       count uint64 per-sample noise seeds
 */
inline void save_archive(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m = ds.manifest;
  m["format"] = "aad-dataset-v1";
  m["count"] = ds.size();
  m["image_size"] = kImageSize;
  detail::write_text(dir / "manifest.json", m.dump(2) + "\n");
  detail::write_raw(dir / "images.f32", std::span<const float>(ds.images.data));
  detail::write_raw(dir / "masks.u8", std::span<const std::uint8_t>(ds.masks));
  std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
  std::vector<std::int32_t> ids(ds.identities.begin(), ds.identities.end());
  detail::write_raw(dir / "labels.i32", std::span<const std::int32_t>(labels));
  detail::write_raw(dir / "identities.i32", std::span<const std::int32_t>(ids));
  detail::write_raw(dir / "ages.f32", std::span<const float>(ds.ages));
  detail::write_raw(dir / "noise.u64", std::span<const std::uint64_t>(ds.noise_seeds));
}

inline Dataset load_archive(const std::filesystem::path& dir) {
  const nlohmann::json m = detail::read_json(dir / "manifest.json");
  if (m.value("format", "") != "aad-dataset-v1")
    throw InvalidInput("load_archive: unrecognized format in " + dir.string());
  if (m.value("image_size", 0) != kImageSize)
    throw InvalidInput("load_archive: unsupported image size");
  Dataset ds;
  ds.manifest = m.get<DatasetManifest>();
  const auto count = m.at("count").get<std::size_t>();
  ds.images = Tensor<float>(static_cast<int>(count), 1, kImageSize, kImageSize);
  const auto pixels = detail::read_raw<float>(dir / "images.f32", count * kImagePixels);
  ds.images.data.assign(pixels.begin(), pixels.end());
  ds.masks = detail::read_raw<std::uint8_t>(dir / "masks.u8", count * kImagePixels);
  const auto labels = detail::read_raw<std::int32_t>(dir / "labels.i32", count);
  const auto ids = detail::read_raw<std::int32_t>(dir / "identities.i32", count);
  ds.labels.assign(labels.begin(), labels.end());
  ds.identities.assign(ids.begin(), ids.end());
  ds.ages = detail::read_raw<float>(dir / "ages.f32", count);
  ds.noise_seeds = detail::read_raw<std::uint64_t>(dir / "noise.u64", count);
  return ds;
}

}  // namespace aad

#endif  // AAD_DATAGEN_HPP_
