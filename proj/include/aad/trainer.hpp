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

// Training loops for the recognition teacher, the age teacher and the
// distilled student, plus the models, objective and checkpoint glue they
// share.

#ifndef AAD_TRAINER_HPP_
#define AAD_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aad/attention.hpp"
#include "aad/backbone.hpp"
#include "aad/datagen.hpp"
#include "aad/io.hpp"
#include "aad/losses.hpp"
#include "aad/params.hpp"
#include "aad/rng.hpp"

namespace aad {

/// Optional per-run overrides of the mode's default loss weights.
struct LambdaOverride {
  std::optional<double> lambda_n;
  std::optional<double> lambda_A;
  /// lambda_1 .. lambda_{n-1}; derived by halving from lambda_n when unset.
  std::optional<std::vector<double>> lambda_intermediate;
};

struct TrainConfig {
  int batch_size = 64;
  int epochs = 20;
  double learning_rate = 0.05;
  /// Epochs at which the rate is multiplied by decay_factor. Empty means
  /// floor(0.6 E) and floor(0.85 E).
  std::vector<int> decay_epochs;
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  DistillMode mode = DistillMode::self;
  LambdaOverride lambdas;
  bool normalized = true;
  double scale = 16.0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (!(decay_factor > 0.0)) throw ConfigError("TrainConfig: decay_factor must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("TrainConfig: momentum in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (normalized && !(scale > 0.0)) throw ConfigError("TrainConfig: scale must be > 0");
    if (lambdas.lambda_n.value_or(0.0) < 0.0 || lambdas.lambda_A.value_or(0.0) < 0.0)
      throw ConfigError("TrainConfig: lambdas must be >= 0");
    for (double l : lambdas.lambda_intermediate.value_or(std::vector<double>{}))
      if (l < 0.0) throw ConfigError("TrainConfig: lambdas must be >= 0");
  }

  std::vector<int> resolved_decay_epochs() const {
    if (!decay_epochs.empty()) return decay_epochs;
    return {static_cast<int>(0.6 * epochs), static_cast<int>(0.85 * epochs)};
  }

  double lr_at(int epoch) const {
    double lr = learning_rate;
    for (int e : resolved_decay_epochs())
      if (epoch >= e) lr *= decay_factor;
    return lr;
  }

  LambdaSchedule schedule(int n) const {
    LambdaSchedule s = default_schedule(mode, n);
    if (lambdas.lambda_n) s = lambda_schedule(*lambdas.lambda_n, n, s.lambda_A);
    if (lambdas.lambda_A) s.lambda_A = *lambdas.lambda_A;
    if (lambdas.lambda_intermediate) {
      if (static_cast<int>(lambdas.lambda_intermediate->size()) != n - 1)
        throw ConfigError("TrainConfig: expected " + std::to_string(n - 1) +
                          " intermediate lambdas, got " +
                          std::to_string(lambdas.lambda_intermediate->size()));
      s.lambda_intermediate = *lambdas.lambda_intermediate;
    }
    return s;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"decay_epochs", c.resolved_decay_epochs()},
       {"decay_factor", c.decay_factor},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed},
       {"mode", to_string(c.mode)},
       {"normalized", c.normalized},
       {"scale", c.scale}};
  nlohmann::json l = nlohmann::json::object();
  if (c.lambdas.lambda_n) l["lambda_n"] = *c.lambdas.lambda_n;
  if (c.lambdas.lambda_A) l["lambda_A"] = *c.lambdas.lambda_A;
  if (c.lambdas.lambda_intermediate) l["lambda_intermediate"] = *c.lambdas.lambda_intermediate;
  if (!l.empty()) j["lambdas"] = l;
}

/// Missing keys keep their current values, so a file can override a subset.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay_epochs = j.value("decay_epochs", c.decay_epochs);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
  c.normalized = j.value("normalized", c.normalized);
  c.scale = j.value("scale", c.scale);
  if (j.contains("lambdas") && j["lambdas"].is_object()) {
    const auto& l = j["lambdas"];
    if (l.contains("lambda_n")) c.lambdas.lambda_n = l["lambda_n"].get<double>();
    if (l.contains("lambda_A")) c.lambdas.lambda_A = l["lambda_A"].get<double>();
    if (l.contains("lambda_intermediate"))
      c.lambdas.lambda_intermediate = l["lambda_intermediate"].get<std::vector<double>>();
  }
}

/// SGD with momentum; L2 weight decay on the slots marked for it.
template <typename T>
class Sgd {
 public:
  Sgd(const ParamSet<T>& ps, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay), velocity_(ps.values().size(), 0.0),
        mask_(ps.decay_mask()) {}

  void step(ParamSet<T>& ps, double lr) {
    auto& v = ps.values();
    const auto& g = ps.grads();
    for (std::size_t k = 0; k < v.size(); ++k) {
      double grad = static_cast<double>(g[k]);
      if (mask_[k]) grad += weight_decay_ * static_cast<double>(v[k]);
      velocity_[k] = momentum_ * velocity_[k] + grad;
      v[k] = static_cast<T>(static_cast<double>(v[k]) - lr * velocity_[k]);
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<double> velocity_;
  std::vector<bool> mask_;
};

// Models ---------------------------------------------------------------------

/// Recognition teacher: backbone plus classifier head.
template <typename T>
struct RecognitionModel {
  Network<T> net;
  ClassifierHead<T> head;

  RecognitionModel() = default;
  RecognitionModel(const NetworkSpec& spec, int classes, std::uint64_t seed)
      : net(spec, mix_seed(seed, 0x7465615f72)),
        head(classes, spec.embedding_dim, mix_seed(seed, 0x7465615f72)) {}
};

/// Age regressor on top of an embedding: sigmoid(w . f + b), so predictions stay in [0, 1].
template <typename T>
class AgeHead {
 public:
  AgeHead() = default;
  AgeHead(int dim, std::uint64_t seed) {
    fc_ = Linear<T>::create(params_, "age.fc", dim, 1);
    Rng rng(mix_seed(seed, 0x616765));
    fc_.init(params_, rng);
  }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Vector<T> forward(const Matrix<T>& emb) const {
    return fc_.forward(params_, emb).col(0).unaryExpr([](T z) { return sigmoid(z); });
  }

  /// Mean squared error against `ages`; accumulates head gradients, returns (loss, dL/demb).
  std::pair<T, Matrix<T>> mse(const Matrix<T>& emb, std::span<const float> ages) {
    const Vector<T> y = forward(emb);
    const auto n = static_cast<Eigen::Index>(ages.size());
    Matrix<T> dz(n, 1);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = static_cast<double>(y(i)) - ages[i];
      loss += d * d;
      dz(i, 0) = static_cast<T>(2.0 * d / n * y(i) * (1.0 - y(i)));
    }
    return {static_cast<T>(loss / n), fc_.backward(&params_, params_, emb, dz)};
  }

 private:
  ParamSet<T> params_;
  Linear<T> fc_;
};

/// Age teacher: backbone with attention reinjection and dropout, plus age head.
template <typename T>
struct AgeModel {
  Network<T> net;
  AgeHead<T> head;

  AgeModel() = default;
  AgeModel(const NetworkSpec& spec, std::uint64_t seed)
      : net(spec, mix_seed(seed, 0x7465615f61)),
        head(spec.embedding_dim, mix_seed(seed, 0x7465615f61)) {}

  static NetworkSpec default_spec() {
    NetworkSpec s = NetworkSpec::teacher();
    s.attention_reinjection = true;
    s.attention_dropout = 0.2;
    return s;
  }
};

/**
 * Student backbone with its classifier, the embedding projection G_n and the
 * per-stage channel adapters H_1..H_{n-1}. The adapters only exist to map
 * into the teacher's dimensions and are dropped at inference.
 */
template <typename T>
struct StudentModel {
  Network<T> net;
  ClassifierHead<T> head;
  Adapter<T> projection;
  std::vector<Adapter<T>> adapters;

  StudentModel() = default;
  StudentModel(const NetworkSpec& spec, const NetworkSpec& teacher, int classes,
               std::uint64_t seed)
      : net(spec, mix_seed(seed, 0x73747564)),
        head(classes, spec.embedding_dim, mix_seed(seed, 0x73747564)) {
    if (teacher.n() != spec.n())
      throw ConfigError("StudentModel: teacher has " + std::to_string(teacher.n()) +
                        " stages, student " + std::to_string(spec.n()));
    projection = Adapter<T>({AdapterKind::channel_projection, spec.embedding_dim,
                             teacher.embedding_dim, Normalization::batch_norm},
                            mix_seed(seed, 0x47));
    for (int i = 1; i < spec.n(); ++i) {
      if (spec.spatial_after(i) != teacher.spatial_after(i))
        throw ConfigError("StudentModel: stage " + std::to_string(i) +
                          " resolution differs from the teacher's");
      adapters.emplace_back(AdapterSpec{AdapterKind::channel_projection,
                                        spec.stages[i - 1].out_channels,
                                        teacher.stages[i - 1].out_channels,
                                        Normalization::batch_norm},
                            mix_seed(seed, 0x48 + static_cast<std::uint64_t>(i)));
    }
  }

  std::vector<ParamSet<T>*> param_sets() {
    std::vector<ParamSet<T>*> out{&net.params(), &head.params(), &projection.params()};
    for (auto& a : adapters) out.push_back(&a.params());
    return out;
  }
  void zero_grad() {
    for (auto* p : param_sets()) p->zero_grad();
  }
};

// Teacher signals ------------------------------------------------------------

/// Teacher outputs for a batch: final embeddings and age-invariant maps for stages 2..n.
template <typename T>
struct DistillTargets {
  Matrix<T> teacher_embedding;
  std::vector<AttentionMap<T>> age_invariant;
};

/// Age-invariant maps D(A_1) * (1 - A_i), i = 2..n, from an attention-reinjecting network.
template <typename T>
std::vector<AttentionMap<T>> age_invariant_targets(const NetworkOutput<T>& age_out) {
  if (age_out.attention.size() < 2)
    throw InvalidInput("age_invariant_targets: network exposes no attention maps");
  std::vector<AttentionMap<T>> out;
  for (std::size_t i = 1; i < age_out.attention.size(); ++i)
    out.push_back(invert_attention(age_out.attention[i], age_out.attention[0]));
  return out;
}

/// Inference embeddings for a whole dataset, in batches.
template <typename T>
Matrix<T> embed_dataset(const Network<T>& net, const Dataset& ds, int batch = 128) {
  Matrix<T> out(ds.size(), net.spec().embedding_dim);
  std::vector<int> idx;
  for (int start = 0; start < ds.size(); start += batch) {
    idx.clear();
    for (int i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const auto e = net.infer(ds.batch<T>(idx)).embedding;
    out.middleRows(start, e.rows()) = e;
  }
  return out;
}

/// Precomputed teacher signals for every sample of a dataset (the teachers are frozen).
template <typename T>
DistillTargets<T> compute_targets(const Network<T>& teacher_r, const Network<T>* teacher_a,
                                  const Dataset& ds, int batch = 128) {
  DistillTargets<T> out;
  out.teacher_embedding = embed_dataset(teacher_r, ds, batch);
  if (!teacher_a) return out;
  std::vector<int> idx;
  for (int start = 0; start < ds.size(); start += batch) {
    idx.clear();
    for (int i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const auto maps = age_invariant_targets(teacher_a->infer(ds.batch<T>(idx)));
    if (out.age_invariant.empty())
      for (const auto& m : maps)
        out.age_invariant.emplace_back(ds.size(), m.h, m.w, T(0), m.stage_index, m.flavor);
    for (std::size_t s = 0; s < maps.size(); ++s)
      std::copy(maps[s].data.begin(), maps[s].data.end(),
                out.age_invariant[s].data.begin() +
                    static_cast<std::size_t>(start) * maps[s].h * maps[s].w);
  }
  return out;
}

/// Rows `indices` of precomputed targets.
template <typename T>
DistillTargets<T> gather_targets(const DistillTargets<T>& all, std::span<const int> indices) {
  DistillTargets<T> out;
  const auto n = static_cast<int>(indices.size());
  if (all.teacher_embedding.size() > 0) {
    out.teacher_embedding.resize(n, all.teacher_embedding.cols());
    for (int q = 0; q < n; ++q) out.teacher_embedding.row(q) = all.teacher_embedding.row(indices[q]);
  }
  for (const auto& m : all.age_invariant) {
    AttentionMap<T> g(n, m.h, m.w, T(0), m.stage_index, m.flavor);
    const std::size_t plane = static_cast<std::size_t>(m.h) * m.w;
    for (int q = 0; q < n; ++q)
      std::copy_n(m.data.begin() + static_cast<std::size_t>(indices[q]) * plane, plane,
                  g.data.begin() + static_cast<std::size_t>(q) * plane);
    out.age_invariant.push_back(std::move(g));
  }
  return out;
}

// Objective ------------------------------------------------------------------

/**
 * Weighted student objective for one batch. Terms with zero weight are
 * neither evaluated nor logged.
 *
 * The intermediate targets tail_i(F^t_i) all equal the teacher embedding:
 * the tail is the teacher's own remaining stages in inference phase, which
 * is exactly how the teacher embedding was computed.
 */
template <typename T>
class DistillationObjective {
 public:
  struct Result {
    LossBreakdown breakdown;
    int correct = 0;
  };

  DistillationObjective(const Network<T>& teacher_r, DistillMode mode, LambdaSchedule lambdas,
                        bool normalized, double scale)
      : teacher_(&teacher_r), mode_(mode), lambdas_(std::move(lambdas)),
        normalized_(normalized), scale_(scale) {
    if (static_cast<int>(lambdas_.lambda_intermediate.size()) != teacher_r.n() - 1)
      throw ConfigError("DistillationObjective: lambda count does not match teacher depth");
    for (int i = 1; i < teacher_r.n(); ++i) tails_.emplace_back(teacher_r, i);
  }

  DistillMode mode() const { return mode_; }
  const LambdaSchedule& lambdas() const { return lambdas_; }

  Result evaluate(StudentModel<T>& s, const Tensor<T>& images, std::span<const int> labels,
                  const DistillTargets<T>& targets, Phase phase, bool backward) {
    Result r;
    auto add = [&](std::string name, double raw, double weight) {
      r.breakdown.terms.push_back({std::move(name), raw, weight, raw * weight});
    };
    const NetworkOutput<T> out = s.net.forward(images, phase, &trace_);
    const int n = s.net.n();
    NetworkGrads<T> grads;

    auto cls = softmax_classification_loss(out.embedding, labels, s.head, normalized_,
                                           static_cast<T>(scale_));
    add("classification", cls.value, 1.0);
    r.correct = cls.correct;
    if (backward) {
      s.head.weight_grads() += cls.d_weights;
      grads.d_embedding = cls.d_embedding;
    }

    const bool distill = mode_ != DistillMode::self;
    if (distill && targets.teacher_embedding.rows() != images.n)
      throw InvalidInput("DistillationObjective: teacher embeddings missing for the batch");

    // Final-layer term through the projection G_n.
    if (distill && lambdas_.lambda_n > 0.0) {
      typename Adapter<T>::Trace pt;
      const Tensor<T> g =
          s.projection.forward(embedding_to_tensor(out.embedding), phase, &pt);
      const Matrix<T> ge = tensor_to_embedding(g);
      PairLoss<T> pl = mode_ == DistillMode::l2
                           ? l2_distillation_loss(targets.teacher_embedding, ge)
                           : angular_distillation_loss(targets.teacher_embedding, ge);
      const double w = lambdas_.lambda_n;
      if (mode_ == DistillMode::l2) add("l2", pl.value, w);
      if (backward) {
        const Tensor<T> d =
            s.projection.backward(pt, embedding_to_tensor<T>(static_cast<T>(w) * pl.d_student));
        grads.d_embedding += tensor_to_embedding(d);
      }
      if (mode_ != DistillMode::l2) final_angular_ = pl.value;
    }

    if (mode_ == DistillMode::ad || mode_ == DistillMode::aad) {
      grads.d_taps.resize(n);
      tail_traces_.resize(n - 1);
      for (int i = 1; i < n; ++i) {
        const double w = lambdas_.lambda_intermediate[i - 1];
        if (w == 0.0) continue;
        auto& h = s.adapters[i - 1];
        typename Adapter<T>::Trace at;
        const Tensor<T> projected = h.forward(out.taps[i - 1].data, phase, &at);
        const Matrix<T> ze = tails_[i - 1](projected, &tail_traces_[i - 1]);
        PairLoss<T> pl = angular_distillation_loss(targets.teacher_embedding, ze);
        add("intermediate_" + std::to_string(i), pl.value, w);
        if (backward) {
          const Tensor<T> df = tails_[i - 1].backward(tail_traces_[i - 1],
                                                      static_cast<T>(w) * pl.d_student);
          grads.d_taps[i - 1] = h.backward(at, df);
        }
      }
      if (lambdas_.lambda_n > 0.0) add("angular", final_angular_, lambdas_.lambda_n);
    }

    if (mode_ == DistillMode::aad && lambdas_.lambda_A > 0.0) {
      if (targets.age_invariant.size() != static_cast<std::size_t>(n - 1))
        throw InvalidInput("DistillationObjective: age-invariant maps missing for the batch");
      if (out.attention.size() != static_cast<std::size_t>(n))
        throw ConfigError("DistillationObjective: student does not expose attention maps");
      std::vector<AttentionMap<T>> student_maps(out.attention.begin() + 1, out.attention.end());
      AttentiveLoss<T> al = attentive_distillation_loss(targets.age_invariant, student_maps);
      const double w = lambdas_.lambda_A;
      add("attentive", al.value, w);
      if (backward) {
        grads.d_attention.resize(n);
        for (int i = 1; i < n; ++i) {
          auto& d = al.d_student[i - 1];
          for (auto& v : d.data) v *= static_cast<T>(w);
          grads.d_attention[i] = std::move(d);
        }
      }
    }

    for (const auto& t : r.breakdown.terms) r.breakdown.total += t.weighted;
    if (backward) s.net.backward(trace_, grads);
    return r;
  }

  /// Traces of the most recent evaluation.
  const typename Network<T>::Trace& student_trace() const { return trace_; }
  const std::vector<typename Network<T>::Trace>& tail_traces() const { return tail_traces_; }

 private:
  const Network<T>* teacher_;
  DistillMode mode_;
  LambdaSchedule lambdas_;
  bool normalized_;
  double scale_;
  std::vector<TeacherTail<T>> tails_;
  typename Network<T>::Trace trace_;
  std::vector<typename Network<T>::Trace> tail_traces_;
  double final_angular_ = 0.0;
};

// Training loops -------------------------------------------------------------

/// Optional sinks for training progress.
struct TrainHooks {
  TrainingLog* log = nullptr;
  std::ostream* progress = nullptr;
};

namespace detail {

inline std::vector<std::vector<int>> epoch_batches(int count, int batch_size, Rng& rng) {
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  rng.shuffle(std::span<int>(order));
  std::vector<std::vector<int>> out;
  for (int start = 0; start < count; start += batch_size) {
    const int end = std::min(count, start + batch_size);
    if (end - start < 2) break;  // batch statistics need two samples
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

inline void check_finite(double v, const std::string& what, int epoch, int step) {
  if (!std::isfinite(v))
    throw TrainingDiverged(what + " became non-finite at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
}

/// A zero-norm embedding after parameters have moved means the run blew up;
/// before the first update it is an input problem and is rethrown as is.
[[noreturn]] inline void degenerate_step(const DegenerateInput& e, int epoch, int step) {
  if (epoch == 0 && step == 0) throw e;
  throw TrainingDiverged(std::string("degenerate forward pass at epoch ") + std::to_string(epoch) +
                         ", step " + std::to_string(step) + ": " + e.what());
}

inline std::vector<int> labelled_indices(const Dataset& ds) {
  std::vector<int> out;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[i] >= 0) out.push_back(i);
  return out;
}

inline int class_count(const Dataset& ds) {
  int c = 0;
  for (int l : ds.labels) c = std::max(c, l + 1);
  return c;
}

inline void report(const TrainHooks& hooks, nlohmann::json rec) {
  if (hooks.progress) *hooks.progress << rec.dump() << "\n" << std::flush;
  if (hooks.log) hooks.log->append(std::move(rec));
}

}  // namespace detail

/// Training-set top-1 of a recognition model in inference phase.
template <typename T>
double classification_accuracy(const Network<T>& net, const ClassifierHead<T>& head,
                               const Dataset& ds, bool normalized, double scale) {
  const std::vector<int> idx = detail::labelled_indices(ds);
  if (idx.empty()) return 0.0;
  int correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += 128) {
    const std::size_t end = std::min(idx.size(), start + 128);
    std::span<const int> b(idx.data() + start, end - start);
    std::vector<int> labels;
    for (int i : b) labels.push_back(ds.labels[i]);
    const auto emb = net.infer(ds.batch<T>(b)).embedding;
    correct += softmax_classification_loss(emb, labels, head, normalized, static_cast<T>(scale))
                   .correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

template <typename T>
double age_mae(const AgeModel<T>& m, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const Vector<T> pred = m.head.forward(embed_dataset(m.net, ds));
  double s = 0.0;
  for (int i = 0; i < ds.size(); ++i) s += std::abs(static_cast<double>(pred(i)) - ds.ages[i]);
  return s / ds.size();
}

struct TrainSummary {
  double metric = 0.0;  // top-1 for recognition models, MAE for the age teacher
  std::string metric_name;
  std::vector<nlohmann::json> epochs;
};

template <typename T>
TrainSummary train_recognition_teacher(RecognitionModel<T>& m, const Dataset& ds,
                                       const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (ds.manifest.split != Split::recognition_train)
    throw ConfigError("train_recognition_teacher: expects the recognition_train split");
  const std::vector<int> pool = detail::labelled_indices(ds);
  Sgd<T> opt_net(m.net.params(), cfg.momentum, cfg.weight_decay);
  Sgd<T> opt_head(m.head.params(), cfg.momentum, cfg.weight_decay);
  Rng rng(mix_seed(cfg.seed, 0x73687566));
  TrainSummary out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    int correct = 0, seen = 0, step = 0;
    for (const auto& b : detail::epoch_batches(static_cast<int>(pool.size()), cfg.batch_size, rng)) {
      try {
        std::vector<int> idx, labels;
        for (int q : b) {
          idx.push_back(pool[q]);
          labels.push_back(ds.labels[pool[q]]);
        }
        m.net.params().zero_grad();
        m.head.params().zero_grad();
        typename Network<T>::Trace tr;
        const auto o = m.net.forward(ds.batch<T>(idx), Phase::training, &tr);
        auto cls = softmax_classification_loss(o.embedding, labels, m.head, cfg.normalized,
                                               static_cast<T>(cfg.scale));
        detail::check_finite(cls.value, "recognition teacher loss", epoch, step);
        m.head.weight_grads() += cls.d_weights;
        NetworkGrads<T> g;
        g.d_embedding = cls.d_embedding;
        m.net.backward(tr, g);
        opt_net.step(m.net.params(), lr);
        opt_head.step(m.head.params(), lr);
        loss_sum += cls.value * static_cast<double>(idx.size());
        correct += cls.correct;
        seen += static_cast<int>(idx.size());
        ++step;
      } catch (const DegenerateInput& e) {
        detail::degenerate_step(e, epoch, step);
      }
    }
    nlohmann::json rec = {{"phase", "teacher-r"}, {"epoch", epoch}, {"lr", lr},
                          {"loss", seen ? loss_sum / seen : 0.0},
                          {"train_batch_top1", seen ? static_cast<double>(correct) / seen : 0.0}};
    out.epochs.push_back(rec);
    detail::report(hooks, rec);
  }
  out.metric_name = "train_top1";
  out.metric = classification_accuracy(m.net, m.head, ds, cfg.normalized, cfg.scale);
  return out;
}

template <typename T>
TrainSummary train_age_teacher(AgeModel<T>& m, const Dataset& ds, const TrainConfig& cfg,
                               const TrainHooks& hooks = {}) {
  cfg.validate();
  if (ds.manifest.split != Split::age_train)
    throw ConfigError("train_age_teacher: expects the age_train split");
  if (!m.net.spec().attention_reinjection)
    throw ConfigError("train_age_teacher: the age teacher must reinject attention");
  Sgd<T> opt_net(m.net.params(), cfg.momentum, cfg.weight_decay);
  Sgd<T> opt_head(m.head.params(), cfg.momentum, cfg.weight_decay);
  Rng rng(mix_seed(cfg.seed, 0x73687566));
  Rng drop(mix_seed(cfg.seed, 0x64726f70));
  TrainSummary out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    int seen = 0, step = 0;
    for (const auto& idx : detail::epoch_batches(ds.size(), cfg.batch_size, rng)) {
      try {
        std::vector<float> ages;
        for (int i : idx) ages.push_back(ds.ages[i]);
        m.net.params().zero_grad();
        m.head.params().zero_grad();
        typename Network<T>::Trace tr;
        const auto o = m.net.forward(ds.batch<T>(idx), Phase::training, &tr, &drop);
        auto [loss, d_emb] = m.head.mse(o.embedding, ages);
        detail::check_finite(loss, "age teacher loss", epoch, step);
        NetworkGrads<T> g;
        g.d_embedding = std::move(d_emb);
        m.net.backward(tr, g);
        opt_net.step(m.net.params(), lr);
        opt_head.step(m.head.params(), lr);
        loss_sum += loss * static_cast<double>(idx.size());
        seen += static_cast<int>(idx.size());
        ++step;
      } catch (const DegenerateInput& e) {
        detail::degenerate_step(e, epoch, step);
      }
    }
    nlohmann::json rec = {{"phase", "teacher-a"}, {"epoch", epoch}, {"lr", lr},
                          {"mse", seen ? loss_sum / seen : 0.0}};
    out.epochs.push_back(rec);
    detail::report(hooks, rec);
  }
  out.metric_name = "train_mae";
  out.metric = age_mae(m, ds);
  return out;
}

/**
 * Distills `teacher_r` (and `teacher_a` for AAD) into the student. Per-step
 * records carry every evaluated term; the teachers are verified unchanged.
 */
template <typename T>
TrainSummary train_student(StudentModel<T>& s, const Dataset& ds, const Network<T>& teacher_r,
                           const Network<T>* teacher_a, const TrainConfig& cfg,
                           const TrainHooks& hooks = {}) {
  cfg.validate();
  if (cfg.mode == DistillMode::aad && teacher_a == nullptr)
    throw ConfigError("train_student: AAD mode requires an age teacher");
  if (ds.manifest.split != Split::recognition_train)
    throw ConfigError("train_student: expects the recognition_train split");
  if (teacher_a && !teacher_a->spec().attention_reinjection)
    throw ConfigError("train_student: the age teacher must expose attention maps");
  const std::uint64_t sum_r = teacher_r.params().checksum();
  const std::uint64_t sum_a = teacher_a ? teacher_a->params().checksum() : 0;

  const LambdaSchedule lambdas = cfg.schedule(s.net.n());
  DistillationObjective<T> objective(teacher_r, cfg.mode, lambdas, cfg.normalized, cfg.scale);
  DistillTargets<T> all;
  if (cfg.mode != DistillMode::self)
    all = compute_targets(teacher_r, cfg.mode == DistillMode::aad ? teacher_a : nullptr, ds);

  const std::vector<int> pool = detail::labelled_indices(ds);
  std::vector<Sgd<T>> opts;
  for (auto* p : s.param_sets()) opts.emplace_back(*p, cfg.momentum, cfg.weight_decay);
  Rng rng(mix_seed(cfg.seed, 0x73687566));
  TrainSummary out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::vector<std::pair<std::string, double>> sums;
    double total_sum = 0.0;
    int correct = 0, seen = 0, step = 0;
    for (const auto& b : detail::epoch_batches(static_cast<int>(pool.size()), cfg.batch_size, rng)) {
      try {
        std::vector<int> idx, labels;
        for (int q : b) {
          idx.push_back(pool[q]);
          labels.push_back(ds.labels[pool[q]]);
        }
        s.zero_grad();
        const auto r = objective.evaluate(s, ds.batch<T>(idx), labels,
                                          cfg.mode == DistillMode::self ? all
                                                                        : gather_targets(all, idx),
                                          Phase::training, true);
        nlohmann::json terms = nlohmann::json::object();
        for (const auto& t : r.breakdown.terms) {
          detail::check_finite(t.raw, "student term '" + t.name + "'", epoch, step);
          terms[t.name] = {{"raw", t.raw}, {"weight", t.weight}, {"weighted", t.weighted}};
          auto it = std::find_if(sums.begin(), sums.end(),
                                 [&](const auto& p) { return p.first == t.name; });
          if (it == sums.end()) sums.emplace_back(t.name, t.raw);
          else it->second += t.raw;
        }
        auto sets = s.param_sets();
        for (std::size_t k = 0; k < sets.size(); ++k) opts[k].step(*sets[k], lr);
        if (hooks.log)
          hooks.log->append({{"phase", "student"}, {"mode", to_string(cfg.mode)},
                             {"epoch", epoch}, {"step", step}, {"lr", lr},
                             {"terms", terms}, {"total", r.breakdown.total}});
        total_sum += r.breakdown.total;
        correct += r.correct;
        seen += static_cast<int>(idx.size());
        ++step;
      } catch (const DegenerateInput& e) {
        detail::degenerate_step(e, epoch, step);
      }
    }
    nlohmann::json means = nlohmann::json::object();
    for (const auto& [name, v] : sums) means[name] = step ? v / step : 0.0;
    nlohmann::json rec = {{"phase", "student-epoch"}, {"mode", to_string(cfg.mode)},
                          {"epoch", epoch}, {"lr", lr}, {"term_means", means},
                          {"total_mean", step ? total_sum / step : 0.0},
                          {"train_batch_top1", seen ? static_cast<double>(correct) / seen : 0.0}};
    out.epochs.push_back(rec);
    detail::report(hooks, rec);
  }
  if (teacher_r.params().checksum() != sum_r ||
      (teacher_a && teacher_a->params().checksum() != sum_a))
    throw std::logic_error("train_student: a teacher was modified during distillation");
  out.metric_name = "train_top1";
  out.metric = classification_accuracy(s.net, s.head, ds, cfg.normalized, cfg.scale);
  return out;
}

// Checkpoints ----------------------------------------------------------------

template <typename T>
void save_recognition(const std::filesystem::path& dir, const RecognitionModel<T>& m,
                      nlohmann::json meta) {
  meta["kind"] = "teacher-r";
  meta["spec"] = m.net.spec();
  meta["classes"] = m.head.classes();
  save_checkpoint<T>(dir, meta, {{"network", &m.net.params()}, {"classifier", &m.head.params()}});
}

template <typename T>
RecognitionModel<T> load_recognition(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_manifest(dir);
  if (meta.value("kind", "") != "teacher-r")
    throw InvalidInput(dir.string() + " is not a recognition teacher checkpoint");
  RecognitionModel<T> m(meta.at("spec").get<NetworkSpec>(), meta.at("classes").get<int>(), 0);
  load_checkpoint<T>(dir, {{"network", &m.net.params()}, {"classifier", &m.head.params()}});
  return m;
}

template <typename T>
void save_age(const std::filesystem::path& dir, const AgeModel<T>& m, nlohmann::json meta) {
  meta["kind"] = "teacher-a";
  meta["spec"] = m.net.spec();
  save_checkpoint<T>(dir, meta, {{"network", &m.net.params()}, {"age_head", &m.head.params()}});
}

template <typename T>
AgeModel<T> load_age(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_manifest(dir);
  if (meta.value("kind", "") != "teacher-a")
    throw InvalidInput(dir.string() + " is not an age teacher checkpoint");
  AgeModel<T> m(meta.at("spec").get<NetworkSpec>(), 0);
  load_checkpoint<T>(dir, {{"network", &m.net.params()}, {"age_head", &m.head.params()}});
  return m;
}

template <typename T>
void save_student(const std::filesystem::path& dir, const StudentModel<T>& s,
                  const NetworkSpec& teacher_spec, nlohmann::json meta) {
  meta["kind"] = "student";
  meta["spec"] = s.net.spec();
  meta["teacher_spec"] = teacher_spec;
  meta["classes"] = s.head.classes();
  ConstNamedParams<T> mods{{"network", &s.net.params()},
                           {"classifier", &s.head.params()},
                           {"projection", &s.projection.params()}};
  for (std::size_t i = 0; i < s.adapters.size(); ++i)
    mods.emplace_back("adapter" + std::to_string(i + 1), &s.adapters[i].params());
  save_checkpoint<T>(dir, meta, mods);
}

template <typename T>
StudentModel<T> load_student(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_manifest(dir);
  if (meta.value("kind", "") != "student")
    throw InvalidInput(dir.string() + " is not a student checkpoint");
  StudentModel<T> s(meta.at("spec").get<NetworkSpec>(), meta.at("teacher_spec").get<NetworkSpec>(),
                    meta.at("classes").get<int>(), 0);
  NamedParams<T> mods{{"network", &s.net.params()},
                      {"classifier", &s.head.params()},
                      {"projection", &s.projection.params()}};
  for (std::size_t i = 0; i < s.adapters.size(); ++i)
    mods.emplace_back("adapter" + std::to_string(i + 1), &s.adapters[i].params());
  load_checkpoint<T>(dir, mods);
  return s;
}

/// The backbone of any checkpoint kind, for embedding and heatmap export.
template <typename T>
Network<T> load_backbone(const std::filesystem::path& dir) {
  const auto kind = read_checkpoint_manifest(dir).value("kind", "");
  if (kind == "teacher-r") return load_recognition<T>(dir).net;
  if (kind == "teacher-a") return load_age<T>(dir).net;
  if (kind == "student") return load_student<T>(dir).net;
  throw InvalidInput(dir.string() + ": unknown checkpoint kind '" + kind + "'");
}

}  // namespace aad

#endif  // AAD_TRAINER_HPP_
