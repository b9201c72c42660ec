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

// Networks as compositions of n residual stages with feature taps.
//
// Stage k is a pre-activation residual block
//
//   F_k = conv2(relu(bn2(conv1(relu(bn1(F_{k-1})))))) + skip(F_{k-1})
//
// where skip is the identity, or a strided 1x1 convolution when the channel
// count or resolution changes. Stage outputs are not rectified, so their
// channel mean (and hence attention) can take either sign. The last stage
// carries the embedding head: bn -> relu -> flatten -> linear.
//
// With attention reinjection enabled every stage output is reweighted by its
// own attention map, F_k <- sigmoid(mean_c F_k) * F_k, before it is tapped
// and passed on.

#ifndef AAD_BACKBONE_HPP_
#define AAD_BACKBONE_HPP_

#include <optional>
#include <string>
#include <vector>

#include "aad/attention.hpp"
#include "aad/layers.hpp"
#include "aad/params.hpp"
#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad {

struct StageSpec {
  int in_channels = 0;
  int out_channels = 0;
  int downsample = 1;  // spatial stride of the stage, 1 or 2
};

struct NetworkSpec {
  std::vector<StageSpec> stages;
  int input_channels = 1;
  int input_size = 32;
  int embedding_dim = 64;
  bool attention_reinjection = false;
  double attention_dropout = 0.0;

  int n() const { return static_cast<int>(stages.size()); }

  /// Spatial size after stage `i` (1-based).
  int spatial_after(int i) const {
    int s = input_size;
    for (int k = 0; k < i; ++k) s /= stages[k].downsample;
    return s;
  }

  void validate() const {
    if (n() < 2) throw ConfigError("NetworkSpec: need at least 2 stages");
    if (embedding_dim <= 0) throw ConfigError("NetworkSpec: embedding_dim must be positive");
    if (input_channels <= 0 || input_size <= 0) throw ConfigError("NetworkSpec: bad input dims");
    if (attention_dropout < 0.0 || attention_dropout >= 1.0)
      throw ConfigError("NetworkSpec: attention_dropout must be in [0, 1)");
    int c = input_channels, s = input_size;
    for (int k = 0; k < n(); ++k) {
      const auto& st = stages[k];
      if (st.in_channels != c)
        throw ConfigError("NetworkSpec: stage " + std::to_string(k + 1) + " expects " +
                          std::to_string(st.in_channels) + " channels, previous stage gives " +
                          std::to_string(c));
      if (st.out_channels <= 0) throw ConfigError("NetworkSpec: channel counts must be positive");
      if (st.downsample != 1 && st.downsample != 2)
        throw ConfigError("NetworkSpec: downsample must be 1 or 2");
      if (s % st.downsample != 0) throw ConfigError("NetworkSpec: spatial size not divisible");
      c = st.out_channels;
      s /= st.downsample;
    }
  }

  /// Residual stages with the given widths; full resolution first, then halving.
  static NetworkSpec from_widths(const std::vector<int>& widths, int embedding_dim,
                                 int input_size = 32, int input_channels = 1) {
    NetworkSpec spec;
    spec.input_channels = input_channels;
    spec.input_size = input_size;
    spec.embedding_dim = embedding_dim;
    int c = input_channels;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      spec.stages.push_back({c, widths[k], k == 0 ? 1 : 2});
      c = widths[k];
    }
    return spec;
  }

  /// Desk-scale teacher: widths {8, 16, 32, 64}, 64-d embedding.
  static NetworkSpec teacher() { return from_widths({8, 16, 32, 64}, 64); }
  /// Lightweight student: widths {4, 8, 16, 32}, 32-d embedding, attention reinjection.
  static NetworkSpec student() {
    auto s = from_widths({4, 8, 16, 32}, 32);
    s.attention_reinjection = true;
    return s;
  }

  bool operator==(const NetworkSpec& o) const {
    if (stages.size() != o.stages.size()) return false;
    for (std::size_t k = 0; k < stages.size(); ++k)
      if (stages[k].in_channels != o.stages[k].in_channels ||
          stages[k].out_channels != o.stages[k].out_channels ||
          stages[k].downsample != o.stages[k].downsample)
        return false;
    return input_channels == o.input_channels && input_size == o.input_size &&
           embedding_dim == o.embedding_dim && attention_reinjection == o.attention_reinjection &&
           attention_dropout == o.attention_dropout;
  }
};

template <typename T>
struct NetworkOutput {
  /// Stage outputs F_1..F_n as passed to the next stage (after reinjection).
  std::vector<StageFeature<T>> taps;
  /// Attention A_1..A_n computed from the stage outputs before reinjection;
  /// filled only when the network reinjects attention.
  std::vector<AttentionMap<T>> attention;
  EmbeddingBatch<T> embedding;
};

/// Upstream gradients for Network::backward. Empty entries mean "no gradient".
template <typename T>
struct NetworkGrads {
  std::vector<Tensor<T>> d_taps;
  std::vector<AttentionMap<T>> d_attention;
  EmbeddingBatch<T> d_embedding;
};

template <typename T>
class Network {
 public:
  struct StageTrace {
    Tensor<T> x, z1, a1, z2, a2;
    typename BatchNorm<T>::Cache bn1, bn2;
    Tensor<T> pre;  // stage output before reinjection
    AttentionMap<T> attention;
    std::vector<T> mask;
  };
  struct Trace {
    int first = 0;
    std::vector<StageTrace> stages;
    Tensor<T> head_in, head_z;
    typename BatchNorm<T>::Cache head_bn;
    Matrix<T> flat;
  };

  Network() = default;
  explicit Network(NetworkSpec spec, std::uint64_t seed = 0) : spec_(std::move(spec)) {
    spec_.validate();
    build();
    initialize(seed);
  }

  const NetworkSpec& spec() const { return spec_; }
  int n() const { return spec_.n(); }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  void initialize(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6e6574));
    for (auto& b : blocks_) {
      b.bn1.init(params_);
      b.conv1.init(params_, rng);
      b.bn2.init(params_);
      b.conv2.init(params_, rng);
      if (b.proj) b.proj->init(params_, rng);
    }
    head_bn_.init(params_);
    head_fc_.init(params_, rng);
  }

  /// Full forward. The training phase updates running statistics.
  NetworkOutput<T> forward(const Tensor<T>& images, Phase phase, Trace* trace = nullptr,
                           Rng* dropout_rng = nullptr) {
    check_input(images);
    return forward_range(0, images, phase, trace, dropout_rng,
                         phase == Phase::training ? &params_ : nullptr);
  }

  NetworkOutput<T> infer(const Tensor<T>& images) const {
    check_input(images);
    return forward_range(0, images, Phase::inference, nullptr, nullptr, nullptr);
  }

  /**
   * Runs stages first..n-1 (0-based) and the head on `input`.
   * `stats`, when non-null, receives running-statistic updates.
   */
  NetworkOutput<T> forward_range(int first, const Tensor<T>& input, Phase phase, Trace* trace,
                                 Rng* dropout_rng, ParamSet<T>* stats) const {
    if (first < 0 || first >= n()) throw InvalidInput("forward_range: bad first stage");
    const auto& st0 = spec_.stages[first];
    const int expect_hw = spec_.spatial_after(first);
    if (input.c != st0.in_channels || input.h != expect_hw || input.w != expect_hw)
      throw InvalidInput("Network: stage " + std::to_string(first + 1) + " expects " +
                         std::to_string(st0.in_channels) + "x" + std::to_string(expect_hw) +
                         "x" + std::to_string(expect_hw) + " input, got " +
                         input.shape_string());
    NetworkOutput<T> out;
    if (trace) {
      trace->first = first;
      trace->stages.assign(n() - first, StageTrace{});
    }
    Tensor<T> x = input;
    for (int k = first; k < n(); ++k) {
      StageTrace local;
      StageTrace& tr = trace ? trace->stages[k - first] : local;
      Tensor<T> f = block_forward(blocks_[k], x, phase, tr, stats);
      if (spec_.attention_reinjection) {
        StageFeature<T> sf{std::move(f), k + 1, FeatureSource::student};
        const bool drop = phase == Phase::training && dropout_rng != nullptr &&
                          spec_.attention_dropout > 0.0;
        AttentionMap<T> a = age_attention_map(sf, drop, spec_.attention_dropout, dropout_rng,
                                              trace ? &tr.mask : nullptr);
        StageFeature<T> g = apply_attention(sf, a);
        if (trace) {
          tr.pre = std::move(sf.data);
          tr.attention = a;
        }
        out.attention.push_back(std::move(a));
        f = std::move(g.data);
      }
      out.taps.push_back({f, k + 1, FeatureSource::student});
      x = std::move(f);
    }
    // Head.
    typename BatchNorm<T>::Cache hb;
    Tensor<T> z = head_bn_.forward(params_, x, phase, trace ? &trace->head_bn : &hb, stats);
    Matrix<T> flat = flatten(relu(z));
    out.embedding = head_fc_.forward(params_, flat);
    if (trace) {
      trace->head_in = std::move(x);
      trace->head_z = std::move(z);
      trace->flat = std::move(flat);
    }
    return out;
  }

  /**
   * Backpropagates through the traced range. Parameter gradients are added to
   * `param_grads` (skipped when null). Returns dL/d(range input) when
   * `need_input_grad`, otherwise an empty tensor.
   */
  Tensor<T> backward_into(const Trace& trace, const NetworkGrads<T>& g, ParamSet<T>* param_grads,
                          bool need_input_grad) const {
    const int first = trace.first;
    const int batch = trace.head_in.n;
    Matrix<T> d_emb = g.d_embedding;
    if (d_emb.size() == 0) d_emb = Matrix<T>::Zero(batch, spec_.embedding_dim);
    Matrix<T> d_flat = head_fc_.backward(param_grads, params_, trace.flat, d_emb);
    const auto& hin = trace.head_in;
    Tensor<T> d_a = unflatten(d_flat, hin.n, hin.c, hin.h, hin.w);
    Tensor<T> dx = head_bn_.backward(param_grads, params_, trace.head_bn,
                                     relu_backward(trace.head_z, d_a));
    for (int k = n() - 1; k >= first; --k) {
      const StageTrace& tr = trace.stages[k - first];
      if (k < static_cast<int>(g.d_taps.size()) && !g.d_taps[k].data.empty()) {
        const auto& dt = g.d_taps[k];
        if (!dt.same_shape(dx)) throw InvalidInput("backward: tap gradient shape mismatch");
        for (std::size_t q = 0; q < dx.data.size(); ++q) dx.data[q] += dt.data[q];
      }
      if (spec_.attention_reinjection) {
        const AttentionMap<T>* da = k < static_cast<int>(g.d_attention.size()) &&
                                            !g.d_attention[k].data.empty()
                                        ? &g.d_attention[k]
                                        : nullptr;
        dx = reinjection_backward(tr.pre, tr.attention, tr.mask, dx, da);
      }
      const bool need = need_input_grad || k > first;
      dx = block_backward(blocks_[k], tr, dx, param_grads, need);
    }
    return dx;
  }

  /// Backward accumulating into this network's own gradients.
  Tensor<T> backward(const Trace& trace, const NetworkGrads<T>& g, bool need_input_grad = false) {
    return backward_into(trace, g, &params_, need_input_grad);
  }

 private:
  struct Block {
    BatchNorm<T> bn1;
    Conv2d<T> conv1;
    BatchNorm<T> bn2;
    Conv2d<T> conv2;
    std::optional<Conv2d<T>> proj;
  };

  void build() {
    for (int k = 0; k < n(); ++k) {
      const auto& s = spec_.stages[k];
      const std::string p = "stage" + std::to_string(k + 1);
      Block b;
      b.bn1 = BatchNorm<T>::create(params_, p + ".bn1", s.in_channels);
      b.conv1 = Conv2d<T>::create(params_, p + ".conv1", s.in_channels, s.out_channels, 3,
                                  s.downsample);
      b.bn2 = BatchNorm<T>::create(params_, p + ".bn2", s.out_channels);
      b.conv2 = Conv2d<T>::create(params_, p + ".conv2", s.out_channels, s.out_channels, 3, 1);
      if (s.in_channels != s.out_channels || s.downsample != 1)
        b.proj = Conv2d<T>::create(params_, p + ".proj", s.in_channels, s.out_channels, 1,
                                   s.downsample);
      blocks_.push_back(b);
    }
    const auto& last = spec_.stages.back();
    const int hw = spec_.spatial_after(n());
    head_bn_ = BatchNorm<T>::create(params_, "head.bn", last.out_channels);
    head_fc_ = Linear<T>::create(params_, "head.fc", last.out_channels * hw * hw,
                                 spec_.embedding_dim);
  }

  void check_input(const Tensor<T>& images) const {
    if (images.c != spec_.input_channels || images.h != spec_.input_size ||
        images.w != spec_.input_size)
      throw InvalidInput("Network: expected images of " + std::to_string(spec_.input_channels) +
                         "x" + std::to_string(spec_.input_size) + "x" +
                         std::to_string(spec_.input_size) + ", got " + images.shape_string());
    if (images.n < 1) throw InvalidInput("Network: empty batch");
  }

  Tensor<T> block_forward(const Block& b, const Tensor<T>& x, Phase phase, StageTrace& tr,
                          ParamSet<T>* stats) const {
    tr.x = x;
    tr.z1 = b.bn1.forward(params_, x, phase, &tr.bn1, stats);
    tr.a1 = relu(tr.z1);
    Tensor<T> c1 = b.conv1.forward(params_, tr.a1);
    tr.z2 = b.bn2.forward(params_, c1, phase, &tr.bn2, stats);
    tr.a2 = relu(tr.z2);
    Tensor<T> y = b.conv2.forward(params_, tr.a2);
    if (b.proj) {
      const Tensor<T> s = b.proj->forward(params_, x);
      for (std::size_t q = 0; q < y.data.size(); ++q) y.data[q] += s.data[q];
    } else {
      for (std::size_t q = 0; q < y.data.size(); ++q) y.data[q] += x.data[q];
    }
    return y;
  }

  Tensor<T> block_backward(const Block& b, const StageTrace& tr, const Tensor<T>& dy,
                           ParamSet<T>* grads, bool need_dx) const {
    Tensor<T> da2 = b.conv2.backward(grads, params_, tr.a2, dy);
    Tensor<T> dc1 = b.bn2.backward(grads, params_, tr.bn2, relu_backward(tr.z2, da2));
    Tensor<T> da1 = b.conv1.backward(grads, params_, tr.a1, dc1);
    Tensor<T> dx = b.bn1.backward(grads, params_, tr.bn1, relu_backward(tr.z1, da1));
    if (b.proj) {
      Tensor<T> ds = b.proj->backward(grads, params_, tr.x, dy, need_dx);
      if (need_dx)
        for (std::size_t q = 0; q < dx.data.size(); ++q) dx.data[q] += ds.data[q];
    } else {
      for (std::size_t q = 0; q < dx.data.size(); ++q) dx.data[q] += dy.data[q];
    }
    return dx;
  }

  NetworkSpec spec_;
  ParamSet<T> params_;
  std::vector<Block> blocks_;
  BatchNorm<T> head_bn_;
  Linear<T> head_fc_;
};

/// F_1..F_n plus embeddings for a batch; the source tag is set on every tap.
template <typename T>
NetworkOutput<T> forward_with_taps(Network<T>& net, const Tensor<T>& images, Phase phase,
                                   FeatureSource source = FeatureSource::student) {
  NetworkOutput<T> out = phase == Phase::inference ? net.infer(images)
                                                   : net.forward(images, phase);
  for (auto& t : out.taps) t.source = source;
  return out;
}

/**
 * Frozen composition of stages i+1..n (and the head) of a trained network.
 * Always evaluated in inference phase; never writes to the network.
 */
template <typename T>
class TeacherTail {
 public:
  using Trace = typename Network<T>::Trace;

  TeacherTail(const Network<T>& net, int after_stage) : net_(&net), after_(after_stage) {
    if (after_stage >= net.n())
      throw InvalidInput("teacher_tail: empty tail after stage " + std::to_string(after_stage) +
                         " of " + std::to_string(net.n()));
    if (after_stage < 1) throw InvalidInput("teacher_tail: stage index must be >= 1");
  }

  int after_stage() const { return after_; }

  EmbeddingBatch<T> operator()(const Tensor<T>& f, Trace* trace = nullptr) const {
    return net_->forward_range(after_, f, Phase::inference, trace, nullptr, nullptr).embedding;
  }

  /// dL/dF for the traced input; teacher parameters receive nothing.
  Tensor<T> backward(const Trace& trace, const EmbeddingBatch<T>& d_embedding) const {
    NetworkGrads<T> g;
    g.d_embedding = d_embedding;
    return net_->backward_into(trace, g, nullptr, true);
  }

 private:
  const Network<T>* net_;
  int after_;
};

template <typename T>
TeacherTail<T> teacher_tail(const Network<T>& teacher, int after_stage) {
  return TeacherTail<T>(teacher, after_stage);
}

enum class AdapterKind { identity, channel_projection };
enum class Normalization { none, batch_norm };

struct AdapterSpec {
  AdapterKind kind = AdapterKind::identity;
  int in_channels = 1;
  int out_channels = 1;
  Normalization normalization = Normalization::none;
};

/// Dimension-matching map between student and teacher features (1x1 conv [+ BN]).
template <typename T>
class Adapter {
 public:
  struct Trace {
    Tensor<T> x;
    Tensor<T> projected;
    typename BatchNorm<T>::Cache bn;
  };

  Adapter() = default;
  explicit Adapter(AdapterSpec spec, std::uint64_t seed = 0) : spec_(spec) {
    if (spec.in_channels <= 0 || spec.out_channels <= 0)
      throw ConfigError("Adapter: channel counts must be positive");
    if (spec.kind == AdapterKind::identity) {
      if (spec.in_channels != spec.out_channels)
        throw ConfigError("Adapter: identity kind needs in_channels == out_channels (" +
                          std::to_string(spec.in_channels) + " vs " +
                          std::to_string(spec.out_channels) + ")");
      return;
    }
    conv_ = Conv2d<T>::create(params_, "proj", spec.in_channels, spec.out_channels, 1, 1);
    if (spec.normalization == Normalization::batch_norm)
      bn_ = BatchNorm<T>::create(params_, "bn", spec.out_channels);
    Rng rng(mix_seed(seed, 0x61646170));
    conv_.init(params_, rng);
    if (bn_) bn_->init(params_);
  }

  const AdapterSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Overwrites the projection weights (out x in, row-major).
  void set_projection(std::span<const T> weights) {
    if (spec_.kind != AdapterKind::channel_projection)
      throw ConfigError("Adapter: identity adapter has no weights");
    auto w = params_.value(conv_.weight);
    if (weights.size() != w.size()) throw InvalidInput("Adapter: weight count mismatch");
    std::copy(weights.begin(), weights.end(), w.begin());
  }

  Tensor<T> forward(const Tensor<T>& x, Phase phase, Trace* trace = nullptr) {
    return forward_impl(x, phase, trace, phase == Phase::training ? &params_ : nullptr);
  }
  Tensor<T> infer(const Tensor<T>& x) const {
    return forward_impl(x, Phase::inference, nullptr, nullptr);
  }

  StageFeature<T> operator()(const StageFeature<T>& f) const {
    return {infer(f.data), f.stage_index, f.source};
  }

  /// Accumulates parameter gradients into this adapter; returns dL/dx.
  Tensor<T> backward(const Trace& trace, const Tensor<T>& dy) {
    if (spec_.kind == AdapterKind::identity) return dy;
    Tensor<T> d = bn_ ? bn_->backward(&params_, params_, trace.bn, dy) : dy;
    return conv_.backward(&params_, params_, trace.x, d);
  }

 private:
  Tensor<T> forward_impl(const Tensor<T>& x, Phase phase, Trace* trace,
                         ParamSet<T>* stats) const {
    if (x.c != spec_.in_channels)
      throw InvalidInput("Adapter: expected " + std::to_string(spec_.in_channels) +
                         " channels, got " + std::to_string(x.c));
    if (spec_.kind == AdapterKind::identity) return x;
    Tensor<T> p = conv_.forward(params_, x);
    typename BatchNorm<T>::Cache local;
    Tensor<T> y = bn_ ? bn_->forward(params_, p, phase, trace ? &trace->bn : &local, stats) : p;
    if (trace) {
      trace->x = x;
      trace->projected = std::move(p);
    }
    return y;
  }

  AdapterSpec spec_;
  ParamSet<T> params_;
  Conv2d<T> conv_;
  std::optional<BatchNorm<T>> bn_;
};

template <typename T>
Adapter<T> make_adapter(const AdapterSpec& spec, std::uint64_t seed = 0) {
  return Adapter<T>(spec, seed);
}

}  // namespace aad

#endif  // AAD_BACKBONE_HPP_
