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

// Open-set evaluation: 10-fold pair verification, leave-one-out rank-1 and
// rank-1 identification against distractors. All comparisons are cosine.
//
// Tie rules (fixed so results are reproducible):
//   * verification predicts "same" iff similarity > threshold; among equally
//     accurate thresholds the smallest wins;
//   * LOO nearest neighbour ties go to the lowest sample index;
//   * in distractor identification the mate must strictly beat every
//     distractor and every non-mate gallery entry.

#ifndef AAD_EVALPROTO_HPP_
#define AAD_EVALPROTO_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad {

template <typename T>
double cosine_similarity(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw InvalidInput("cosine_similarity: dimension mismatch");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    dot += static_cast<double>(u[k]) * v[k];
    uu += static_cast<double>(u[k]) * u[k];
    vv += static_cast<double>(v[k]) * v[k];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) throw DegenerateInput("cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

template <typename T>
std::span<const T> embedding_row(const Matrix<T>& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

struct VerificationPair {
  int a = 0;
  int b = 0;
  bool same = false;
  double age_gap = 0.0;
};

struct EvalReport {
  std::string protocol;
  double accuracy = 0.0;
  std::vector<double> fold_accuracies;
  std::vector<double> thresholds;
  std::map<std::string, long> counts;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"protocol", r.protocol},
       {"accuracy", r.accuracy},
       {"fold_accuracies", r.fold_accuracies},
       {"thresholds", r.thresholds},
       {"counts", r.counts}};
}

constexpr int kVerificationFolds = 10;

/**
 * Label-balanced fold ids: positives then negatives (each in list order) are
 * dealt round-robin into 10 folds, so every fold is non-empty once there are
 * at least 10 pairs and per-fold label counts differ by at most one.
 */
inline std::vector<int> assign_folds(const std::vector<bool>& same) {
  std::vector<int> folds(same.size());
  int counter = 0;
  for (bool want : {true, false})
    for (std::size_t k = 0; k < same.size(); ++k)
      if (same[k] == want) folds[k] = counter++ % kVerificationFolds;
  return folds;
}

namespace detail {

/// Best threshold on a training set: sentinels below/above plus midpoints.
inline double best_threshold(std::vector<std::pair<double, bool>> train) {
  std::sort(train.begin(), train.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  const long positives = std::count_if(train.begin(), train.end(), [](auto& p) { return p.second; });
  // Threshold below everything: all predicted same.
  double best_thr = train.front().first - 1.0;
  long best_correct = positives;
  long pos_at_or_below = 0, neg_at_or_below = 0;
  for (std::size_t k = 0; k < train.size(); ++k) {
    (train[k].second ? pos_at_or_below : neg_at_or_below)++;
    const bool last = k + 1 == train.size();
    if (!last && train[k + 1].first == train[k].first) continue;
    const double thr = last ? train[k].first + 1.0 : 0.5 * (train[k].first + train[k + 1].first);
    const long correct = neg_at_or_below + (positives - pos_at_or_below);
    if (correct > best_correct) {
      best_correct = correct;
      best_thr = thr;
    }
  }
  return best_thr;
}

}  // namespace detail

/// 10-fold verification on precomputed similarities with explicit fold ids.
inline EvalReport verify_10fold(std::span<const double> similarity, const std::vector<bool>& same,
                                std::span<const int> folds) {
  if (similarity.size() != same.size() || folds.size() != same.size())
    throw InvalidInput("verify_10fold: size mismatch");
  if (similarity.size() < static_cast<std::size_t>(kVerificationFolds))
    throw InvalidInput("verify_10fold: need at least 10 pairs, got " +
                       std::to_string(similarity.size()));
  EvalReport r;
  r.protocol = "verify_10fold";
  for (int f = 0; f < kVerificationFolds; ++f) {
    std::vector<std::pair<double, bool>> train;
    for (std::size_t k = 0; k < same.size(); ++k)
      if (folds[k] != f) train.emplace_back(similarity[k], same[k]);
    long test = 0, correct = 0;
    const double thr = detail::best_threshold(std::move(train));
    for (std::size_t k = 0; k < same.size(); ++k)
      if (folds[k] == f) {
        ++test;
        if ((similarity[k] > thr) == same[k]) ++correct;
      }
    if (test == 0) throw InvalidInput("verify_10fold: fold " + std::to_string(f) + " is empty");
    r.thresholds.push_back(thr);
    r.fold_accuracies.push_back(static_cast<double>(correct) / test);
  }
  r.accuracy = std::accumulate(r.fold_accuracies.begin(), r.fold_accuracies.end(), 0.0) /
               kVerificationFolds;
  r.counts["pairs"] = static_cast<long>(same.size());
  r.counts["positive"] = std::count(same.begin(), same.end(), true);
  r.counts["negative"] = std::count(same.begin(), same.end(), false);
  return r;
}

template <typename T>
EvalReport verify_10fold(const std::vector<VerificationPair>& pairs, const Matrix<T>& embeddings) {
  std::vector<double> sim;
  std::vector<bool> same;
  for (const auto& p : pairs) {
    if (p.a == p.b) throw InvalidInput("verify_10fold: pair compares a sample with itself");
    sim.push_back(cosine_similarity(embedding_row(embeddings, p.a), embedding_row(embeddings, p.b)));
    same.push_back(p.same);
  }
  const auto folds = assign_folds(same);
  return verify_10fold(sim, same, folds);
}

/**
 * Leave-one-out rank-1: each sample whose identity has another sample is
 * matched against every other sample. Samples of singleton identities are
 * not queried (they still serve as candidates) and are counted as excluded.
 */
template <typename T>
EvalReport rank1_loo(const Matrix<T>& embeddings, std::span<const int> labels) {
  const int n = static_cast<int>(embeddings.rows());
  if (static_cast<int>(labels.size()) != n) throw InvalidInput("rank1_loo: label count mismatch");
  std::map<int, int> per_label;
  for (int y : labels) ++per_label[y];
  EvalReport r;
  r.protocol = "rank1_loo";
  long queries = 0, correct = 0, excluded = 0;
  for (int i = 0; i < n; ++i) {
    if (per_label[labels[i]] < 2) {
      ++excluded;
      continue;
    }
    int best = -1;
    double best_sim = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = cosine_similarity(embedding_row(embeddings, i), embedding_row(embeddings, j));
      if (best < 0 || s > best_sim) {
        best = j;
        best_sim = s;
      }
    }
    ++queries;
    if (best >= 0 && labels[best] == labels[i]) ++correct;
  }
  r.accuracy = queries > 0 ? static_cast<double>(correct) / queries : 0.0;
  r.counts["queries"] = queries;
  r.counts["correct"] = correct;
  r.counts["excluded_singletons"] = excluded;
  return r;
}

/// Rank-1 identification of probes against gallery plus unlabeled distractors.
template <typename T>
EvalReport rank1_distractors(const Matrix<T>& probes, std::span<const int> probe_labels,
                             const Matrix<T>& gallery, std::span<const int> gallery_labels,
                             const Matrix<T>& distractors) {
  if (static_cast<Eigen::Index>(probe_labels.size()) != probes.rows() ||
      static_cast<Eigen::Index>(gallery_labels.size()) != gallery.rows())
    throw InvalidInput("rank1_distractors: label count mismatch");
  EvalReport r;
  r.protocol = "rank1_distractors";
  long correct = 0;
  for (Eigen::Index p = 0; p < probes.rows(); ++p) {
    const auto pv = embedding_row(probes, p);
    double mate = 0.0, rival = -2.0;
    bool has_mate = false;
    for (Eigen::Index g = 0; g < gallery.rows(); ++g) {
      const double s = cosine_similarity(pv, embedding_row(gallery, g));
      if (gallery_labels[g] == probe_labels[p]) {
        if (!has_mate || s > mate) mate = s;
        has_mate = true;
      } else {
        rival = std::max(rival, s);
      }
    }
    if (!has_mate)
      throw InvalidInput("rank1_distractors: probe " + std::to_string(p) +
                         " has no mate in the gallery");
    for (Eigen::Index d = 0; d < distractors.rows(); ++d)
      rival = std::max(rival, cosine_similarity(pv, embedding_row(distractors, d)));
    if (mate > rival) ++correct;
  }
  r.accuracy = probes.rows() > 0 ? static_cast<double>(correct) / probes.rows() : 0.0;
  r.counts["probes"] = static_cast<long>(probes.rows());
  r.counts["gallery"] = static_cast<long>(gallery.rows());
  r.counts["distractors"] = static_cast<long>(distractors.rows());
  r.counts["correct"] = correct;
  return r;
}

constexpr int kAgeGapBuckets = 3;

/// Age-gap bucket: thirds of [0, 1] (small, medium, large).
inline int age_gap_bucket(double gap) {
  return std::clamp(static_cast<int>(std::floor(gap * kAgeGapBuckets)), 0, kAgeGapBuckets - 1);
}

inline const char* age_gap_bucket_name(int b) {
  static const char* names[] = {"small", "medium", "large"};
  return names[b];
}

/**
 * Balanced verification pairs in each age-gap bucket: up to `per_bucket`
 * positives drawn from all same-identity pairs in the bucket, and the same
 * number of different-identity pairs in that bucket. Samples with a negative
 * label are ignored.
 */
inline std::vector<VerificationPair> make_verification_pairs(std::span<const int> labels,
                                                             std::span<const float> ages,
                                                             int per_bucket, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x70616972));
  const int n = static_cast<int>(labels.size());
  std::vector<VerificationPair> out;
  for (int b = 0; b < kAgeGapBuckets; ++b) {
    std::vector<VerificationPair> pos;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (labels[i] < 0 || labels[i] != labels[j]) continue;
        const double gap = std::abs(static_cast<double>(ages[i]) - ages[j]);
        if (age_gap_bucket(gap) == b) pos.push_back({i, j, true, gap});
      }
    rng.shuffle(std::span<VerificationPair>(pos));
    if (static_cast<int>(pos.size()) > per_bucket) pos.resize(per_bucket);
    std::vector<VerificationPair> neg;
    const std::size_t want = pos.size();
    std::size_t attempts = 0;
    while (neg.size() < want && attempts < want * 1000 + 1000) {
      ++attempts;
      const int i = static_cast<int>(rng.below(n)), j = static_cast<int>(rng.below(n));
      if (i == j || labels[i] < 0 || labels[j] < 0 || labels[i] == labels[j]) continue;
      const double gap = std::abs(static_cast<double>(ages[i]) - ages[j]);
      if (age_gap_bucket(gap) == b) neg.push_back({std::min(i, j), std::max(i, j), false, gap});
    }
    out.insert(out.end(), pos.begin(), pos.end());
    out.insert(out.end(), neg.begin(), neg.end());
  }
  return out;
}

}  // namespace aad

#endif  // AAD_EVALPROTO_HPP_
