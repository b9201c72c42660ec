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

#ifndef AAD_PARAMS_HPP_
#define AAD_PARAMS_HPP_

#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "aad/tensor.hpp"

namespace aad {

/// 64-bit FNV-1a over raw bytes.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t fnv1a(std::span<const T> values, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(values.data()),
                                              values.size_bytes()),
               h);
}

/**
 * Flat storage for the parameters of one module.
 *
 * Trainable tensors live in `values` (with matching `grads`); running
 * statistics and other non-trainable state live in `buffers`. Slots are
 * registered once at construction; after that the vectors never resize, so
 * spans handed out stay valid.
 */
template <typename T>
class ParamSet {
 public:
  struct Slot {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool buffer = false;
    bool decay = true;  // subject to weight decay
  };

  int add(std::string name, std::vector<int> shape, bool decay = true) {
    return add_slot(std::move(name), std::move(shape), false, decay);
  }
  int add_buffer(std::string name, std::vector<int> shape) {
    return add_slot(std::move(name), std::move(shape), true, false);
  }

  std::span<T> value(int id) { return {values_.data() + slots_[id].offset, slots_[id].size}; }
  std::span<const T> value(int id) const {
    return {values_.data() + slots_[id].offset, slots_[id].size};
  }
  std::span<T> grad(int id) { return {grads_.data() + slots_[id].offset, slots_[id].size}; }
  std::span<const T> grad(int id) const {
    return {grads_.data() + slots_[id].offset, slots_[id].size};
  }
  std::span<T> buffer(int id) { return {buffers_.data() + slots_[id].offset, slots_[id].size}; }
  std::span<const T> buffer(int id) const {
    return {buffers_.data() + slots_[id].offset, slots_[id].size};
  }

  Buffer<T>& values() { return values_; }
  const Buffer<T>& values() const { return values_; }
  Buffer<T>& grads() { return grads_; }
  const Buffer<T>& grads() const { return grads_; }
  Buffer<T>& buffers() { return buffers_; }
  const Buffer<T>& buffers() const { return buffers_; }
  const std::vector<Slot>& slots() const { return slots_; }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a(std::span<const T>(values_));
    return fnv1a(std::span<const T>(buffers_), h);
  }

  /// Element-wise copy of values and buffers from a set with identical layout.
  void copy_state_from(const ParamSet& other) {
    if (other.values_.size() != values_.size() || other.buffers_.size() != buffers_.size())
      throw InvalidInput("ParamSet::copy_state_from: layout mismatch");
    values_ = other.values_;
    buffers_ = other.buffers_;
  }

  /// Mask of the flat value vector that weight decay applies to.
  std::vector<bool> decay_mask() const {
    std::vector<bool> mask(values_.size(), false);
    for (const auto& s : slots_)
      if (!s.buffer && s.decay)
        std::fill(mask.begin() + s.offset, mask.begin() + s.offset + s.size, true);
    return mask;
  }

 private:
  int add_slot(std::string name, std::vector<int> shape, bool is_buffer, bool decay) {
    Slot s;
    s.name = std::move(name);
    s.size = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                             [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    s.shape = std::move(shape);
    s.buffer = is_buffer;
    s.decay = decay;
    auto& storage = is_buffer ? buffers_ : values_;
    s.offset = storage.size();
    storage.resize(storage.size() + s.size, T(0));
    if (!is_buffer) grads_.resize(values_.size(), T(0));
    slots_.push_back(std::move(s));
    return static_cast<int>(slots_.size()) - 1;
  }

  Buffer<T> values_;
  Buffer<T> grads_;
  Buffer<T> buffers_;
  std::vector<Slot> slots_;
};

}  // namespace aad

#endif  // AAD_PARAMS_HPP_
