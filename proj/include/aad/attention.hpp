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

// Spatial attention maps: extraction from stage features, age-invariant
// inversion, reinjection into features, and the attentive distillation loss.

#ifndef AAD_ATTENTION_HPP_
#define AAD_ATTENTION_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad {

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Channel mean at every (sample, y, x).
template <typename T>
AttentionMap<T> channel_mean(const Tensor<T>& f) {
  if (f.c < 1 || f.n < 1 || f.h < 1 || f.w < 1)
    throw InvalidInput("channel_mean: empty feature " + f.shape_string());
  AttentionMap<T> m(f.n, f.h, f.w);
  const std::size_t cs = f.channel_size();
  for (int ch = 0; ch < f.c; ++ch) {
    const T* src = f.data.data() + ch * cs;
    for (std::size_t k = 0; k < cs; ++k) m.data[k] += src[k];
  }
  const T inv = T(1) / static_cast<T>(f.c);
  for (auto& v : m.data) v *= inv;
  return m;
}

/// Multiplicative dropout mask on a pooled map; entries are 0 or 1/(1-rate).
template <typename T>
std::vector<T> dropout_mask(std::size_t size, double rate, Rng& rng) {
  std::vector<T> mask(size);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : mask) v = rng.bernoulli(rate) ? T(0) : keep;
  return mask;
}

/**
 * Age-sensitive attention: sigmoid of the channel-averaged feature.
 *
 * With `training` set and a positive rate, dropout is applied to the pooled
 * map before the sigmoid (dropped positions read 0.5), which keeps the output
 * inside (0, 1). `mask_out`, when given, receives the mask that was used.
 */
template <typename T>
AttentionMap<T> age_attention_map(const StageFeature<T>& f, bool training = false,
                                  double dropout_rate = 0.0, Rng* rng = nullptr,
                                  std::vector<T>* mask_out = nullptr) {
  if (!f.data.all_finite()) throw InvalidInput("age_attention_map: non-finite feature");
  AttentionMap<T> a = channel_mean(f.data);
  a.stage_index = f.stage_index;
  a.flavor = f.source == FeatureSource::student ? AttentionFlavor::student
                                                : AttentionFlavor::age_sensitive;
  if (training && dropout_rate > 0.0) {
    if (rng == nullptr) throw InvalidInput("age_attention_map: dropout needs an rng");
    std::vector<T> mask = dropout_mask<T>(a.data.size(), dropout_rate, *rng);
    for (std::size_t k = 0; k < a.data.size(); ++k) a.data[k] *= mask[k];
    if (mask_out) *mask_out = std::move(mask);
  } else if (mask_out) {
    mask_out->clear();
  }
  for (auto& v : a.data) v = sigmoid(v);
  return a;
}

/// dL/dF given dL/dA for A = age_attention_map(F); `mask` empty when no dropout.
template <typename T>
Tensor<T> age_attention_map_backward(const Tensor<T>& f, const AttentionMap<T>& a,
                                     const AttentionMap<T>& da,
                                     const std::vector<T>& mask = {}) {
  if (!a.same_shape(da) || a.n != f.n || a.h != f.h || a.w != f.w)
    throw InvalidInput("age_attention_map_backward: shape mismatch");
  std::vector<T> dm(a.data.size());
  const T inv_c = T(1) / static_cast<T>(f.c);
  for (std::size_t k = 0; k < dm.size(); ++k) {
    T g = da.data[k] * a.data[k] * (T(1) - a.data[k]);
    if (!mask.empty()) g *= mask[k];
    dm[k] = g * inv_c;
  }
  Tensor<T> df(f.n, f.c, f.h, f.w);
  const std::size_t cs = f.channel_size();
  for (int ch = 0; ch < f.c; ++ch) std::copy(dm.begin(), dm.end(), df.data.begin() + ch * cs);
  return df;
}

/// Non-overlapping window average down to (target_h, target_w).
template <typename T>
AttentionMap<T> downsample_map(const AttentionMap<T>& a, int target_h, int target_w) {
  if (target_h <= 0 || target_w <= 0 || a.h % target_h != 0 || a.w % target_w != 0)
    throw InvalidInput("downsample_map: " + std::to_string(target_h) + "x" +
                       std::to_string(target_w) + " does not evenly divide " +
                       std::to_string(a.h) + "x" + std::to_string(a.w));
  const int fy = a.h / target_h, fx = a.w / target_w;
  AttentionMap<T> out(a.n, target_h, target_w, T(0), a.stage_index, a.flavor);
  const T inv = T(1) / static_cast<T>(fy * fx);
  for (int i = 0; i < a.n; ++i)
    for (int y = 0; y < target_h; ++y)
      for (int x = 0; x < target_w; ++x) {
        T s = T(0);
        for (int dy = 0; dy < fy; ++dy)
          for (int dx = 0; dx < fx; ++dx) s += a.at(i, y * fy + dy, x * fx + dx);
        // Rounding in the mean can step a hair outside [0, 1].
        out.at(i, y, x) = std::clamp(s * inv, T(0), T(1));
      }
  return out;
}

/// Age-invariant attention D(A_1) * (1 - A_i) for stage i > 1.
template <typename T>
AttentionMap<T> invert_attention(const AttentionMap<T>& a_i, const AttentionMap<T>& a_1) {
  if (a_i.stage_index <= 1)
    throw InvalidInput("invert_attention: defined for stages after the first, got stage " +
                       std::to_string(a_i.stage_index));
  if (a_1.n != a_i.n) throw InvalidInput("invert_attention: batch size mismatch");
  const AttentionMap<T> prior =
      (a_1.h == a_i.h && a_1.w == a_i.w) ? a_1 : downsample_map(a_1, a_i.h, a_i.w);
  AttentionMap<T> out(a_i.n, a_i.h, a_i.w, T(0), a_i.stage_index,
                      AttentionFlavor::age_invariant);
  for (std::size_t k = 0; k < out.data.size(); ++k)
    out.data[k] = prior.data[k] * (T(1) - a_i.data[k]);
  return out;
}

/// Multiplies every channel of F by A.
template <typename T>
StageFeature<T> apply_attention(const StageFeature<T>& f, const AttentionMap<T>& a) {
  if (a.n != f.data.n || a.h != f.data.h || a.w != f.data.w)
    throw InvalidInput("apply_attention: map " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                       " does not match feature " + f.data.shape_string());
  StageFeature<T> out = f;
  const std::size_t cs = f.data.channel_size();
  for (int ch = 0; ch < f.data.c; ++ch) {
    T* dst = out.data.data.data() + ch * cs;
    for (std::size_t k = 0; k < cs; ++k) dst[k] *= a.data[k];
  }
  return out;
}

/**
 * Backward of F' = A(F) * F where A = age_attention_map(F).
 *
 * `d_out` is dL/dF', `d_attention_ext` (may be empty) is any gradient
 * arriving at A directly, e.g. from the attentive distillation loss.
 */
template <typename T>
Tensor<T> reinjection_backward(const Tensor<T>& f, const AttentionMap<T>& a,
                               const std::vector<T>& mask, const Tensor<T>& d_out,
                               const AttentionMap<T>* d_attention_ext) {
  AttentionMap<T> da(a.n, a.h, a.w);
  const std::size_t cs = f.channel_size();
  for (int ch = 0; ch < f.c; ++ch) {
    const T* fv = f.data.data() + ch * cs;
    const T* g = d_out.data.data() + ch * cs;
    for (std::size_t k = 0; k < cs; ++k) da.data[k] += g[k] * fv[k];
  }
  if (d_attention_ext != nullptr && !d_attention_ext->data.empty())
    for (std::size_t k = 0; k < cs; ++k) da.data[k] += d_attention_ext->data[k];
  Tensor<T> df = age_attention_map_backward(f, a, da, mask);
  for (int ch = 0; ch < f.c; ++ch) {
    T* dst = df.data.data() + ch * cs;
    const T* g = d_out.data.data() + ch * cs;
    for (std::size_t k = 0; k < cs; ++k) dst[k] += a.data[k] * g[k];
  }
  return df;
}

template <typename T>
struct AttentiveLoss {
  T value = T(0);
  /// dL/dA^S per stage, positionally aligned with the student maps.
  std::vector<AttentionMap<T>> d_student;
};

/**
 * Sum over stages of squared L2 distance between age-invariant teacher maps
 * and student maps, averaged over the batch. Pairs are compared with the
 * identity transform, so their spatial dims must already agree.
 */
template <typename T>
AttentiveLoss<T> attentive_distillation_loss(const std::vector<AttentionMap<T>>& teacher_maps,
                                             const std::vector<AttentionMap<T>>& student_maps) {
  if (teacher_maps.size() != student_maps.size())
    throw InvalidInput("attentive_distillation_loss: " + std::to_string(teacher_maps.size()) +
                       " teacher maps vs " + std::to_string(student_maps.size()) +
                       " student maps");
  AttentiveLoss<T> out;
  for (std::size_t s = 0; s < teacher_maps.size(); ++s) {
    const auto& t = teacher_maps[s];
    const auto& st = student_maps[s];
    if (!t.same_shape(st))
      throw InvalidInput("attentive_distillation_loss: pair " + std::to_string(s) +
                         " has mismatched dims");
    const T inv_n = T(1) / static_cast<T>(t.n);
    AttentionMap<T> d(st.n, st.h, st.w, T(0), st.stage_index, st.flavor);
    T sum = T(0);
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const T diff = st.data[k] - t.data[k];
      sum += diff * diff;
      d.data[k] = T(2) * diff * inv_n;
    }
    out.value += sum * inv_n;
    out.d_student.push_back(std::move(d));
  }
  return out;
}

}  // namespace aad

#endif  // AAD_ATTENTION_HPP_
