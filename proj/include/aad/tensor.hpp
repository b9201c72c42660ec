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

#ifndef AAD_TENSOR_HPP_
#define AAD_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace aad {

/// Input rejected by a precondition check (shape mismatch, bad range, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent configuration (adapter spec, loss mode, schedule, CLI config).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Zero-norm vector where a direction is required.
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite loss during training.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contiguous numeric storage. Aligned so that Eigen's vectorized reductions
/// over mapped views peel the same way on every allocation; with plain
/// std::vector, float sums depend on the heap address.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Batch of embeddings, one row per sample.
template <typename T>
using EmbeddingBatch = Matrix<T>;

/**
 * A batch of activation blocks of shape n x c x h x w.
 *
 * Storage is channel-major (c, n, h, w): every channel of the whole batch is
 * one contiguous run, so a convolution over the batch is a single GEMM whose
 * output rows are channels. Use at() for logical (sample, channel, y, x)
 * addressing.
 */
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  /// Elements per channel across the batch.
  std::size_t channel_size() const { return static_cast<std::size_t>(n) * h * w; }

  std::size_t index(int i, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(ch) * n + i) * h + y) * w + x;
  }
  T& at(int i, int ch, int y, int x) { return data[index(i, ch, y, x)]; }
  const T& at(int i, int ch, int y, int x) const { return data[index(i, ch, y, x)]; }

  std::span<T> channel(int ch) {
    return {data.data() + static_cast<std::size_t>(ch) * channel_size(), channel_size()};
  }
  std::span<const T> channel(int ch) const {
    return {data.data() + static_cast<std::size_t>(ch) * channel_size(), channel_size()};
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }
};

/// Which network produced a stage feature.
enum class FeatureSource { teacher_recognition, teacher_age, student };

/// Activation block tapped at the boundary after stage `stage_index` (1-based).
template <typename T>
struct StageFeature {
  Tensor<T> data;
  int stage_index = 0;
  FeatureSource source = FeatureSource::student;
};

enum class AttentionFlavor { age_sensitive, age_invariant, student };

inline const char* to_string(AttentionFlavor f) {
  switch (f) {
    case AttentionFlavor::age_sensitive: return "age_sensitive";
    case AttentionFlavor::age_invariant: return "age_invariant";
    case AttentionFlavor::student: return "student";
  }
  return "unknown";
}

/// Batch of spatial maps with entries in [0, 1]; layout (n, h, w).
template <typename T>
struct AttentionMap {
  int n = 0;
  int h = 0;
  int w = 0;
  Buffer<T> data;
  int stage_index = 0;
  AttentionFlavor flavor = AttentionFlavor::age_sensitive;

  AttentionMap() = default;
  AttentionMap(int n_, int h_, int w_, T fill = T(0), int stage = 0,
               AttentionFlavor fl = AttentionFlavor::age_sensitive)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, fill),
        stage_index(stage), flavor(fl) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T& at(int i, int y, int x) { return data[(static_cast<std::size_t>(i) * h + y) * w + x]; }
  const T& at(int i, int y, int x) const {
    return data[(static_cast<std::size_t>(i) * h + y) * w + x];
  }
  std::span<const T> sample(int i) const { return {data.data() + i * plane(), plane()}; }
  bool same_shape(const AttentionMap& o) const { return n == o.n && h == o.h && w == o.w; }
};

/// Embedding batch (rows = samples) viewed as an n x d x 1 x 1 tensor.
template <typename T>
Tensor<T> embedding_to_tensor(const EmbeddingBatch<T>& e) {
  Tensor<T> t(static_cast<int>(e.rows()), static_cast<int>(e.cols()), 1, 1);
  for (int i = 0; i < t.n; ++i)
    for (int ch = 0; ch < t.c; ++ch) t.at(i, ch, 0, 0) = e(i, ch);
  return t;
}

template <typename T>
EmbeddingBatch<T> tensor_to_embedding(const Tensor<T>& t) {
  if (t.h != 1 || t.w != 1) throw InvalidInput("tensor_to_embedding: spatial dims must be 1x1");
  EmbeddingBatch<T> e(t.n, t.c);
  for (int i = 0; i < t.n; ++i)
    for (int ch = 0; ch < t.c; ++ch) e(i, ch) = t.at(i, ch, 0, 0);
  return e;
}

}  // namespace aad

#endif  // AAD_TENSOR_HPP_
