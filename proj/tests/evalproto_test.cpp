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

#include <gtest/gtest.h>

#include <cmath>

#include "aad/evalproto.hpp"
#include "oracles.hpp"
#include "protocol_check.hpp"
#include "test_util.hpp"

namespace aad {
namespace {

double cos(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine_similarity<double>(std::span<const double>(a), std::span<const double>(b));
}

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cos({1, 2}, {2, 4}), 1.0);
  EXPECT_NEAR(cos({1, 0}, {0, 5}), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(cos({1, 1}, {-1, -1}), -1.0);
  EXPECT_THROW(cos({0, 0}, {1, 0}), DegenerateInput);
  EXPECT_THROW(cos({1, 0}, {1, 0, 0}), InvalidInput);
}

TEST(Folds, BalancedAndComplete) {
  std::vector<bool> same;
  for (int k = 0; k < 37; ++k) same.push_back(k % 3 == 0);
  auto f = assign_folds(same);
  std::vector<int> pos(10, 0), neg(10, 0);
  for (std::size_t k = 0; k < same.size(); ++k) (same[k] ? pos : neg)[f[k]]++;
  for (int a = 0; a < 10; ++a) {
    EXPECT_GT(pos[a] + neg[a], 0);
    for (int b = 0; b < 10; ++b) EXPECT_LE(std::abs(pos[a] - pos[b]), 1);
  }
}

TEST(Verify, IdenticalPositivesScorePerfectly) {
  Matrix<double> e(4, 3);
  e << 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  std::vector<VerificationPair> pairs;
  for (int k = 0; k < 10; ++k) pairs.push_back({0, 1, true, 0.0});
  for (int k = 0; k < 10; ++k) pairs.push_back({2, 3, false, 0.0});
  EXPECT_DOUBLE_EQ(verify_10fold(pairs, e).accuracy, 1.0);
  for (auto& p : pairs) p.same = true;
  EXPECT_DOUBLE_EQ(verify_10fold(pairs, e).accuracy, 1.0);
}

TEST(Verify, IsotropicEmbeddingsAreAtChance) {
  Rng rng(1);
  Matrix<double> e = test::random_matrix(rng, 4000, 16);
  std::vector<VerificationPair> pairs;
  for (int k = 0; k < 2000; ++k) pairs.push_back({2 * k, 2 * k + 1, k % 2 == 0, 0.0});
  const double acc = verify_10fold(pairs, e).accuracy;
  EXPECT_GE(acc, 0.45);
  EXPECT_LE(acc, 0.55);
}

TEST(Verify, SeparableScoresPickThresholdInGap) {
  std::vector<double> sim;
  std::vector<bool> same;
  for (int k = 0; k < 10; ++k) {
    sim.push_back(0.8 + 0.01 * k);
    same.push_back(true);
    sim.push_back(0.1 + 0.01 * k);
    same.push_back(false);
  }
  auto r = verify_10fold(sim, same, assign_folds(same));
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  for (double t : r.thresholds) {
    EXPECT_GT(t, 0.19);
    EXPECT_LT(t, 0.8);
  }
  EXPECT_EQ(r.counts.at("positive"), 10);
}

TEST(Verify, TooFewPairsRejected) {
  std::vector<double> sim(9, 0.5);
  std::vector<bool> same(9, true);
  std::vector<int> folds(9, 0);
  EXPECT_THROW(verify_10fold(sim, same, folds), InvalidInput);
  Matrix<double> e = Matrix<double>::Ones(2, 2);
  std::vector<VerificationPair> self(12, VerificationPair{1, 1, true, 0.0});
  EXPECT_THROW(verify_10fold(self, e), InvalidInput);
}

TEST(Verify, TiesPreferSmallestThreshold) {
  // All similarities equal: every threshold classifies everything the same way,
  // the lowest sentinel predicts "same" for all.
  std::vector<double> sim(20, 0.3);
  std::vector<bool> same(20, false);
  for (int k = 0; k < 10; ++k) same[k] = true;
  auto r = verify_10fold(sim, same, assign_folds(same));
  for (double t : r.thresholds) EXPECT_DOUBLE_EQ(t, -0.7);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
}

TEST(Verify, PairOrderWithinFoldsDoesNotMatter) {
  Rng rng(2);
  std::vector<double> sim;
  std::vector<bool> same;
  for (int k = 0; k < 100; ++k) {
    same.push_back(rng.bernoulli(0.5));
    sim.push_back(rng.normal() + (same.back() ? 0.7 : 0.0));
  }
  auto folds = assign_folds(same);
  auto base = verify_10fold(sim, same, folds);
  std::vector<int> order(100);
  for (int k = 0; k < 100; ++k) order[k] = k;
  rng.shuffle(std::span<int>(order));
  std::vector<double> s2;
  std::vector<bool> y2;
  std::vector<int> f2;
  for (int k : order) {
    s2.push_back(sim[k]);
    y2.push_back(same[k]);
    f2.push_back(folds[k]);
  }
  auto shuffled = verify_10fold(s2, y2, f2);
  EXPECT_EQ(shuffled.fold_accuracies, base.fold_accuracies);
  EXPECT_EQ(shuffled.thresholds, base.thresholds);
}

TEST(RankOneLoo, TwoClusters) {
  Matrix<double> e(6, 2);
  e << 1, 0.1, 1, 0, 1, -0.1, -1, 0.1, -1, 0, -1, -0.1;
  std::vector<int> y{0, 0, 0, 1, 1, 1};
  auto r = rank1_loo(e, y);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.counts.at("queries"), 6);
}

TEST(RankOneLoo, IdenticalEmbeddingsMatchBruteForce) {
  Matrix<double> e = Matrix<double>::Ones(7, 3);
  std::vector<int> y{2, 0, 0, 1, 1, 2, 3};
  EXPECT_DOUBLE_EQ(rank1_loo(e, y).accuracy, oracle::rank1_loo(e, y));
}

TEST(RankOneLoo, SingletonsExcludedButStillCandidates) {
  Matrix<double> e(3, 2);
  e << 1, 0, 0, 1, 1, 0.01;
  std::vector<int> y{0, 0, 1};
  auto r = rank1_loo(e, y);
  EXPECT_EQ(r.counts.at("excluded_singletons"), 1);
  EXPECT_EQ(r.counts.at("queries"), 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.0);  // the singleton steals sample 0
}

TEST(RankOneLoo, RandomInstanceMatchesOracle) {
  Rng rng(3);
  std::vector<int> y;
  for (int k = 0; k < 30; ++k) y.push_back(static_cast<int>(rng.below(6)));
  auto e = oracle::clustered(rng, y, 6, 5, 1.0);
  EXPECT_NEAR(rank1_loo(e, y).accuracy, oracle::rank1_loo(e, y), 1e-12);
}

TEST(RankOneDistractors, Examples) {
  Matrix<double> probes(1, 2), gallery(2, 2), distractors(1, 2);
  probes << 1, 0;
  gallery << 1, 0, 0, 1;
  distractors << 0, -1;
  std::vector<int> pl{5}, gl{5, 6};
  EXPECT_DOUBLE_EQ(rank1_distractors(probes, pl, gallery, gl, distractors).accuracy, 1.0);
  distractors << 2, 0;  // identical direction: ties go to the distractor
  EXPECT_DOUBLE_EQ(rank1_distractors(probes, pl, gallery, gl, distractors).accuracy, 0.0);
  std::vector<int> orphan{7};
  EXPECT_THROW(rank1_distractors(probes, orphan, gallery, gl, distractors), InvalidInput);
}

TEST(RankOneDistractors, RandomInstanceMatchesOracle) {
  Rng rng(4);
  std::vector<int> pl, gl;
  for (int k = 0; k < 10; ++k) pl.push_back(k);
  for (int k = 0; k < 10; ++k) gl.push_back(k);
  auto probes = oracle::clustered(rng, pl, 10, 8, 0.8);
  Rng same_centres(4);
  auto gallery = oracle::clustered(same_centres, gl, 10, 8, 0.8);
  auto distractors = test::random_matrix(rng, 100, 8);
  EXPECT_NEAR(rank1_distractors(probes, pl, gallery, gl, distractors).accuracy,
              oracle::rank1_distractors(probes, pl, gallery, gl, distractors), 1e-12);
}

TEST(Protocols, PositiveRescalingInvariantProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> y;
    for (int k = 0; k < 40; ++k) y.push_back(static_cast<int>(rng.below(8)));
    auto e = oracle::clustered(rng, y, 8, 6, 1.5);
    Matrix<double> scaled = e;
    for (int i = 0; i < scaled.rows(); ++i) scaled.row(i) *= 0.01 + 50.0 * rng.uniform();
    EXPECT_EQ(rank1_loo(e, y).accuracy, rank1_loo(scaled, y).accuracy);
    std::vector<VerificationPair> pairs;
    for (int k = 0; k < 60; ++k) {
      const int a = static_cast<int>(rng.below(40)), b = (a + 1 + static_cast<int>(rng.below(39))) % 40;
      pairs.push_back({a, b, y[a] == y[b], 0.0});
    }
    EXPECT_NEAR(verify_10fold(pairs, e).accuracy, verify_10fold(pairs, scaled).accuracy, 1e-12);
    Matrix<double> d = test::random_matrix(rng, 20, 6);
    Matrix<double> p = e.topRows(10), g = e.bottomRows(30);
    Matrix<double> ps = scaled.topRows(10), gs = scaled.bottomRows(30), ds = 3.0 * d;
    std::vector<int> pl(y.begin(), y.begin() + 10), gl(y.begin() + 10, y.end());
    bool every_probe_has_mate = true;
    for (int l : pl) every_probe_has_mate &= std::count(gl.begin(), gl.end(), l) > 0;
    if (every_probe_has_mate)
      EXPECT_EQ(rank1_distractors(p, pl, g, gl, d).accuracy,
                rank1_distractors(ps, pl, gs, gl, ds).accuracy);
  }
}

TEST(Protocols, MatchOraclesOnRandomInstances) {
  for (std::uint64_t s = 0; s < 60; ++s) {
    auto r = test::check_protocols_once(1000 + s);
    EXPECT_TRUE(r.ok) << "seed " << s << ": " << r.detail;
    EXPECT_LE(r.embeddings, 200);
  }
}

TEST(AgeGapBuckets, Thirds) {
  EXPECT_EQ(age_gap_bucket(0.0), 0);
  EXPECT_EQ(age_gap_bucket(0.3), 0);
  EXPECT_EQ(age_gap_bucket(0.34), 1);
  EXPECT_EQ(age_gap_bucket(0.7), 2);
  EXPECT_EQ(age_gap_bucket(1.0), 2);
}

TEST(VerificationPairs, BalancedPerBucket) {
  Rng rng(6);
  std::vector<int> y;
  std::vector<float> ages;
  for (int id = 0; id < 20; ++id)
    for (int k = 0; k < 10; ++k) {
      y.push_back(id);
      ages.push_back(static_cast<float>((k + rng.uniform()) / 10.0));
    }
  y.push_back(-1);
  ages.push_back(0.5f);
  auto pairs = make_verification_pairs(y, ages, 50, 9);
  int pos[3] = {0, 0, 0}, neg[3] = {0, 0, 0};
  for (const auto& p : pairs) {
    ASSERT_NE(p.a, p.b);
    ASSERT_GE(y[p.a], 0);
    ASSERT_GE(y[p.b], 0);
    ASSERT_EQ(p.same, y[p.a] == y[p.b]);
    ASSERT_NEAR(p.age_gap, std::abs(double(ages[p.a]) - ages[p.b]), 1e-12);
    (p.same ? pos : neg)[age_gap_bucket(p.age_gap)]++;
  }
  for (int b = 0; b < 3; ++b) {
    EXPECT_EQ(pos[b], 50);
    EXPECT_EQ(neg[b], 50);
  }
  auto again = make_verification_pairs(y, ages, 50, 9);
  ASSERT_EQ(again.size(), pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) EXPECT_EQ(again[k].a, pairs[k].a);
}

}  // namespace
}  // namespace aad
