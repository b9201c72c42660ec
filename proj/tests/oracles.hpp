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

// Brute-force reference implementations of the evaluation protocols. They
// share no code with aad/evalproto.hpp and trade speed for obviousness.

#ifndef AAD_TESTS_ORACLES_HPP_
#define AAD_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad::oracle {

inline double cosine(const Matrix<double>& a, int i, const Matrix<double>& b, int j) {
  const double c = a.row(i).dot(b.row(j)) / (a.row(i).norm() * b.row(j).norm());
  return std::clamp(c, -1.0, 1.0);
}

struct Verification {
  std::vector<double> fold_accuracies;
  std::vector<double> thresholds;
  double accuracy = 0.0;
};

/// Fold of pair k: positives, then negatives, dealt round robin into 10 folds.
inline std::vector<int> folds(const std::vector<bool>& same) {
  std::vector<int> out(same.size(), -1);
  int next = 0;
  for (std::size_t k = 0; k < same.size(); ++k)
    if (same[k]) out[k] = (next++) % 10;
  for (std::size_t k = 0; k < same.size(); ++k)
    if (!same[k]) out[k] = (next++) % 10;
  return out;
}

/**
 * For each fold: try every candidate threshold on the other nine folds,
 * counting hits directly; the first (smallest) best candidate wins. Candidates
 * are one below the minimum, midpoints of adjacent distinct values, and one
 * above the maximum.
 */
inline Verification verify(const std::vector<double>& sim, const std::vector<bool>& same,
                           const std::vector<int>& fold) {
  Verification r;
  for (int f = 0; f < 10; ++f) {
    std::set<double> values;
    for (std::size_t k = 0; k < sim.size(); ++k)
      if (fold[k] != f) values.insert(sim[k]);
    std::vector<double> v(values.begin(), values.end()), cand{v.front() - 1.0};
    for (std::size_t k = 0; k + 1 < v.size(); ++k) cand.push_back((v[k] + v[k + 1]) / 2.0);
    cand.push_back(v.back() + 1.0);
    double best_thr = 0.0;
    long best = -1;
    for (double t : cand) {
      long hits = 0;
      for (std::size_t k = 0; k < sim.size(); ++k)
        if (fold[k] != f && (sim[k] > t) == same[k]) ++hits;
      if (hits > best) {
        best = hits;
        best_thr = t;
      }
    }
    long hits = 0, total = 0;
    for (std::size_t k = 0; k < sim.size(); ++k)
      if (fold[k] == f) {
        ++total;
        hits += (sim[k] > best_thr) == same[k];
      }
    r.thresholds.push_back(best_thr);
    r.fold_accuracies.push_back(static_cast<double>(hits) / total);
  }
  for (double a : r.fold_accuracies) r.accuracy += a / 10.0;
  return r;
}

/// Leave-one-out rank-1 over queries whose label occurs at least twice.
/// Exact similarity ties resolve to the lowest index.
inline double rank1_loo(const Matrix<double>& e, const std::vector<int>& labels) {
  const int n = static_cast<int>(e.rows());
  long queries = 0, hits = 0;
  for (int i = 0; i < n; ++i) {
    if (std::count(labels.begin(), labels.end(), labels[i]) < 2) continue;
    std::vector<double> s(n, -3.0);
    for (int j = 0; j < n; ++j)
      if (j != i) s[j] = cosine(e, i, e, j);
    const int top = static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
    ++queries;
    hits += labels[top] == labels[i];
  }
  return queries ? static_cast<double>(hits) / queries : 0.0;
}

/// Probe is correct when its best mate strictly beats every other candidate.
inline double rank1_distractors(const Matrix<double>& probes, const std::vector<int>& plabels,
                                const Matrix<double>& gallery, const std::vector<int>& glabels,
                                const Matrix<double>& distractors) {
  long hits = 0;
  for (int p = 0; p < probes.rows(); ++p) {
    std::vector<double> mates, others;
    for (int g = 0; g < gallery.rows(); ++g)
      (glabels[g] == plabels[p] ? mates : others).push_back(cosine(probes, p, gallery, g));
    for (int d = 0; d < distractors.rows(); ++d) others.push_back(cosine(probes, p, distractors, d));
    const double m = *std::max_element(mates.begin(), mates.end());
    hits += std::all_of(others.begin(), others.end(), [&](double o) { return m > o; });
  }
  return probes.rows() ? static_cast<double>(hits) / probes.rows() : 0.0;
}

/// Embeddings around `ids` random centres; `noise` sets how well they separate.
inline Matrix<double> clustered(Rng& rng, const std::vector<int>& labels, int ids, int dim,
                                double noise) {
  Matrix<double> centres(ids, dim), e(labels.size(), dim);
  for (Eigen::Index k = 0; k < centres.size(); ++k) centres.data()[k] = rng.normal();
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int d = 0; d < dim; ++d) e(i, d) = centres(labels[i], d) + noise * rng.normal();
  return e;
}

}  // namespace aad::oracle

#endif  // AAD_TESTS_ORACLES_HPP_
