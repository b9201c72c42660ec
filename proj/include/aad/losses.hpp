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

#ifndef AAD_LOSSES_HPP_
#define AAD_LOSSES_HPP_

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aad/backbone.hpp"
#include "aad/tensor.hpp"

namespace aad {

namespace detail {

template <typename T>
T checked_norm(std::span<const T> v, const char* what) {
  double s = 0.0;
  for (T x : v) s += static_cast<double>(x) * x;
  const double n = std::sqrt(s);
  if (!(n > 0.0) || !std::isfinite(n))
    throw DegenerateInput(std::string(what) + ": zero-norm vector has no direction");
  return static_cast<T>(n);
}

template <typename T>
std::span<const T> row(const Matrix<T>& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace detail

/// Linear classifier without bias; one weight row per class.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int classes, int dim, std::uint64_t seed = 0) : classes_(classes), dim_(dim) {
    if (classes < 2) throw ConfigError("ClassifierHead: need at least 2 classes");
    if (dim < 1) throw ConfigError("ClassifierHead: dim must be positive");
    weight_ = params_.add("classifier.weight", {classes, dim}, /*decay=*/false);
    Rng rng(mix_seed(seed, 0x636c73));
    const double std = std::sqrt(1.0 / dim);
    for (auto& v : params_.value(weight_)) v = static_cast<T>(std * rng.normal());
  }

  int classes() const { return classes_; }
  int dim() const { return dim_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  ConstMatrixMap<T> weights() const { return {params_.value(weight_).data(), classes_, dim_}; }
  MatrixMap<T> weights() { return {params_.value(weight_).data(), classes_, dim_}; }
  MatrixMap<T> weight_grads() { return {params_.grad(weight_).data(), classes_, dim_}; }

 private:
  int classes_ = 0;
  int dim_ = 0;
  int weight_ = -1;
  ParamSet<T> params_;
};

template <typename T>
struct ClassificationLoss {
  T value = T(0);
  Matrix<T> d_embedding;
  Matrix<T> d_weights;
  Matrix<T> logits;
  int correct = 0;
};

/**
 * Mean softmax cross-entropy over the batch.
 *
 * Plain mode: logits = W f. Normalized mode: logits = scale * cos(W_c, f),
 * both rows of W and f taken to unit length.
 */
template <typename T>
ClassificationLoss<T> softmax_classification_loss(const EmbeddingBatch<T>& emb,
                                                  std::span<const int> labels,
                                                  const ClassifierHead<T>& head, bool normalized,
                                                  T scale) {
  const int n = static_cast<int>(emb.rows());
  const int c = head.classes();
  if (emb.cols() != head.dim())
    throw InvalidInput("softmax_classification_loss: embedding dim " +
                       std::to_string(emb.cols()) + " vs head dim " + std::to_string(head.dim()));
  if (static_cast<int>(labels.size()) != n)
    throw InvalidInput("softmax_classification_loss: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) throw InvalidInput("softmax_classification_loss: label out of range");
  if (normalized && !(scale > T(0)))
    throw InvalidInput("softmax_classification_loss: scale must be positive");

  const Matrix<T> w = head.weights();
  Matrix<T> wn = w, fn = emb;
  Vector<T> wnorm(c), fnorm(n);
  if (normalized) {
    for (int k = 0; k < c; ++k) {
      wnorm(k) = detail::checked_norm<T>(detail::row(w, k), "classifier weight row");
      wn.row(k) /= wnorm(k);
    }
    for (int i = 0; i < n; ++i) {
      fnorm(i) = detail::checked_norm<T>(detail::row(emb, i), "embedding");
      fn.row(i) /= fnorm(i);
    }
  }
  ClassificationLoss<T> out;
  out.logits = normalized ? Matrix<T>(scale * (fn * wn.transpose())) : Matrix<T>(emb * w.transpose());
  Matrix<T> dlogits(n, c);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto row = out.logits.row(i);
    const T mx = row.maxCoeff();
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += std::exp(static_cast<double>(row(k) - mx));
    const double lse = std::log(z) + mx;
    total += lse - row(labels[i]);
    int argmax = 0;
    for (int k = 0; k < c; ++k) {
      dlogits(i, k) = static_cast<T>(std::exp(row(k) - lse) / n);
      if (row(k) > row(argmax)) argmax = k;
    }
    dlogits(i, labels[i]) -= T(1) / static_cast<T>(n);
    if (argmax == labels[i]) ++out.correct;
  }
  out.value = static_cast<T>(total / n);
  if (!normalized) {
    out.d_embedding = dlogits * w;
    out.d_weights = dlogits.transpose() * emb;
  } else {
    // d(unit)/d(raw) = (I - u u^T) / |raw|.
    Matrix<T> dfn = scale * (dlogits * wn);
    Matrix<T> dwn = scale * (dlogits.transpose() * fn);
    out.d_embedding.resize(n, emb.cols());
    for (int i = 0; i < n; ++i) {
      const T proj = dfn.row(i).dot(fn.row(i));
      out.d_embedding.row(i) = (dfn.row(i) - proj * fn.row(i)) / fnorm(i);
    }
    out.d_weights.resize(c, w.cols());
    for (int k = 0; k < c; ++k) {
      const T proj = dwn.row(k).dot(wn.row(k));
      out.d_weights.row(k) = (dwn.row(k) - proj * wn.row(k)) / wnorm(k);
    }
  }
  return out;
}

template <typename T>
struct PairLoss {
  T value = T(0);
  Matrix<T> d_teacher;
  Matrix<T> d_student;
};

/// (1 - cos(t, s))^2 for one pair of nonzero vectors.
template <typename T>
T angular_distillation_loss(std::span<const T> teacher, std::span<const T> student) {
  if (teacher.size() != student.size())
    throw InvalidInput("angular_distillation_loss: dimension mismatch");
  const T nt = detail::checked_norm(teacher, "angular_distillation_loss");
  const T ns = detail::checked_norm(student, "angular_distillation_loss");
  double dot = 0.0;
  for (std::size_t k = 0; k < teacher.size(); ++k) dot += static_cast<double>(teacher[k]) * student[k];
  const T cos = static_cast<T>(std::clamp(dot / (static_cast<double>(nt) * ns), -1.0, 1.0));
  return (T(1) - cos) * (T(1) - cos);
}

/// Batch mean of the angular loss over rows, with gradients for both sides.
template <typename T>
PairLoss<T> angular_distillation_loss(const Matrix<T>& teacher, const Matrix<T>& student) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols())
    throw InvalidInput("angular_distillation_loss: shape mismatch");
  const auto n = teacher.rows();
  PairLoss<T> out;
  out.d_teacher.resize(n, teacher.cols());
  out.d_student.resize(n, teacher.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T nt = detail::checked_norm(detail::row(teacher, i), "angular_distillation_loss");
    const T ns = detail::checked_norm(detail::row(student, i), "angular_distillation_loss");
    const auto tu = teacher.row(i) / nt;
    const auto su = student.row(i) / ns;
    const T cos = tu.dot(su);
    total += (T(1) - cos) * (T(1) - cos);
    const T g = T(-2) * (T(1) - cos) / static_cast<T>(n);
    out.d_student.row(i) = g * (tu - cos * su) / ns;
    out.d_teacher.row(i) = g * (su - cos * tu) / nt;
  }
  out.value = static_cast<T>(total / n);
  return out;
}

/// Squared Euclidean distance for one pair.
template <typename T>
T l2_distillation_loss(std::span<const T> teacher, std::span<const T> student) {
  if (teacher.size() != student.size())
    throw InvalidInput("l2_distillation_loss: dimension mismatch");
  T s = T(0);
  for (std::size_t k = 0; k < teacher.size(); ++k) s += (student[k] - teacher[k]) * (student[k] - teacher[k]);
  return s;
}

/// Batch mean of squared distances, with gradients.
template <typename T>
PairLoss<T> l2_distillation_loss(const Matrix<T>& teacher, const Matrix<T>& student) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols())
    throw InvalidInput("l2_distillation_loss: shape mismatch");
  const auto n = static_cast<T>(teacher.rows());
  PairLoss<T> out;
  const Matrix<T> diff = student - teacher;
  out.value = diff.squaredNorm() / n;
  out.d_student = (T(2) / n) * diff;
  out.d_teacher = -out.d_student;
  return out;
}

template <typename T>
struct IntermediateLoss {
  T value = T(0);
  Tensor<T> d_student_feature;
};

/**
 * Angular loss between tail(F_t) and tail(H(F_s)) with the teacher tail frozen.
 * H receives parameter gradients; the returned tensor is dL/dF_s.
 */
template <typename T>
IntermediateLoss<T> intermediate_angular_loss(const StageFeature<T>& teacher_feature,
                                              const StageFeature<T>& student_feature,
                                              Adapter<T>& h, const TeacherTail<T>& tail,
                                              Phase adapter_phase = Phase::training) {
  typename Adapter<T>::Trace at;
  typename TeacherTail<T>::Trace tt;
  const Tensor<T> projected = h.forward(student_feature.data, adapter_phase, &at);
  const EmbeddingBatch<T> ze_s = tail(projected, &tt);
  const EmbeddingBatch<T> ze_t = tail(teacher_feature.data);
  PairLoss<T> pl = angular_distillation_loss(ze_t, ze_s);
  IntermediateLoss<T> out;
  out.value = pl.value;
  out.d_student_feature = h.backward(at, tail.backward(tt, pl.d_student));
  return out;
}

/// Value-only variant on a const adapter evaluated in inference phase.
template <typename T>
T intermediate_angular_loss_value(const StageFeature<T>& teacher_feature,
                                  const StageFeature<T>& student_feature, const Adapter<T>& h,
                                  const TeacherTail<T>& tail) {
  return angular_distillation_loss(tail(teacher_feature.data),
                                   tail(h.infer(student_feature.data)))
      .value;
}

enum class DistillMode { self, l2, ad, aad };

inline const char* to_string(DistillMode m) {
  switch (m) {
    case DistillMode::self: return "self";
    case DistillMode::l2: return "l2";
    case DistillMode::ad: return "AD";
    case DistillMode::aad: return "AAD";
  }
  return "?";
}

inline DistillMode parse_mode(const std::string& s) {
  if (s == "self") return DistillMode::self;
  if (s == "l2") return DistillMode::l2;
  if (s == "AD" || s == "ad") return DistillMode::ad;
  if (s == "AAD" || s == "aad") return DistillMode::aad;
  throw ConfigError("unknown mode '" + s + "' (expected self, l2, AD or AAD)");
}

struct LambdaSchedule {
  double lambda_n = 1.0;
  /// lambda_1 .. lambda_{n-1}
  std::vector<double> lambda_intermediate;
  double lambda_A = 0.1;
};

/// Intermediate weights halve stage by stage: lambda_i = lambda_{i+1} / 2.
inline LambdaSchedule lambda_schedule(double lambda_n, int n, double lambda_A = 0.1) {
  if (n < 2) throw ConfigError("lambda_schedule: n must be >= 2");
  if (lambda_n < 0.0) throw ConfigError("lambda_schedule: lambda_n must be >= 0");
  LambdaSchedule s;
  s.lambda_n = lambda_n;
  s.lambda_A = lambda_A;
  s.lambda_intermediate.assign(n - 1, 0.0);
  double v = lambda_n;
  for (int i = n - 2; i >= 0; --i) {
    v /= 2.0;
    s.lambda_intermediate[i] = v;
  }
  return s;
}

/// Defaults per mode: lambda_n = 1 for angular terms, 0.001 for the l2 baseline.
inline LambdaSchedule default_schedule(DistillMode mode, int n = 4) {
  switch (mode) {
    case DistillMode::l2: return lambda_schedule(0.001, n, 0.0);
    case DistillMode::self: return lambda_schedule(0.0, n, 0.0);
    default: return lambda_schedule(1.0, n, 0.1);
  }
}

/// Raw (unweighted) batch losses.
struct LossTerms {
  double classification = 0.0;
  std::optional<double> l2;
  std::optional<double> final_angular;
  std::vector<double> intermediate;  // stages 1..n-1
  std::optional<double> attentive;
};

struct LossTerm {
  std::string name;
  double raw = 0.0;
  double weight = 0.0;
  double weighted = 0.0;
};

struct LossBreakdown {
  std::vector<LossTerm> terms;
  double total = 0.0;
};

/// Weighted objective for one of the four student modes.
inline LossBreakdown total_loss(const LossTerms& t, const LambdaSchedule& s, DistillMode mode) {
  LossBreakdown out;
  auto add = [&](std::string name, double raw, double weight) {
    out.terms.push_back({std::move(name), raw, weight, raw * weight});
  };
  add("classification", t.classification, 1.0);
  switch (mode) {
    case DistillMode::self:
      break;
    case DistillMode::l2:
      if (!t.l2) throw ConfigError("total_loss: l2 mode needs the l2 term");
      add("l2", *t.l2, s.lambda_n);
      break;
    case DistillMode::ad:
    case DistillMode::aad:
      if (!t.final_angular) throw ConfigError("total_loss: AD/AAD needs the final angular term");
      if (t.intermediate.size() != s.lambda_intermediate.size())
        throw ConfigError("total_loss: expected " + std::to_string(s.lambda_intermediate.size()) +
                          " intermediate terms, got " + std::to_string(t.intermediate.size()));
      for (std::size_t i = 0; i < t.intermediate.size(); ++i)
        add("intermediate_" + std::to_string(i + 1), t.intermediate[i], s.lambda_intermediate[i]);
      add("angular", *t.final_angular, s.lambda_n);
      if (mode == DistillMode::aad) {
        if (!t.attentive) throw ConfigError("total_loss: AAD needs the attentive term");
        add("attentive", *t.attentive, s.lambda_A);
      }
      break;
  }
  for (const auto& term : out.terms) out.total += term.weighted;
  return out;
}

}  // namespace aad

#endif  // AAD_LOSSES_HPP_
