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
#include <numbers>

#include "aad/losses.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace aad {
namespace {

using test::random_directions;
using test::random_matrix;

double angular(const std::vector<double>& t, const std::vector<double>& s) {
  return angular_distillation_loss<double>(std::span<const double>(t), std::span<const double>(s));
}

TEST(Classification, TwoClassExample) {
  ClassifierHead<double> head(2, 2);
  head.weights() << 1.0, 0.0, 0.0, 0.0;
  Matrix<double> f(1, 2);
  f << 1.0, 0.0;
  std::vector<int> y{0};
  auto r = softmax_classification_loss<double>(f, y, head, false, 1.0);
  EXPECT_NEAR(r.value, -std::log(std::numbers::e / (std::numbers::e + 1.0)), 1e-12);
  EXPECT_EQ(r.correct, 1);
}

TEST(Classification, UniformLogitsGiveLogC) {
  for (int c : {2, 5, 17}) {
    ClassifierHead<double> head(c, 4);
    head.weights().setZero();
    Rng rng(c);
    auto f = random_matrix(rng, 3, 4);
    std::vector<int> y{0, 1, c - 1};
    EXPECT_NEAR(softmax_classification_loss<double>(f, y, head, false, 1.0).value, std::log(c), 1e-12);
  }
}

TEST(Classification, NormalizedIgnoresEmbeddingScale) {
  Rng rng(2);
  ClassifierHead<double> head(6, 8, 1);
  auto f = random_directions(rng, 4, 8);
  std::vector<int> y{0, 3, 5, 2};
  const double a = softmax_classification_loss<double>(f, y, head, true, 16.0).value;
  const Matrix<double> g = 10.0 * f;
  EXPECT_NEAR(softmax_classification_loss<double>(g, y, head, true, 16.0).value, a, 1e-12);
}

TEST(Classification, DegenerateAndInvalidInputs) {
  ClassifierHead<double> head(3, 4, 0);
  Matrix<double> zero = Matrix<double>::Zero(1, 4);
  std::vector<int> y{1};
  EXPECT_THROW(softmax_classification_loss<double>(zero, y, head, true, 16.0), DegenerateInput);
  Matrix<double> f = Matrix<double>::Ones(1, 4);
  head.weights().row(2).setZero();
  EXPECT_THROW(softmax_classification_loss<double>(f, y, head, true, 16.0), DegenerateInput);
  std::vector<int> bad{3};
  EXPECT_THROW(softmax_classification_loss<double>(f, bad, head, false, 1.0), InvalidInput);
  EXPECT_THROW(ClassifierHead<double>(1, 4), ConfigError);
}

TEST(Classification, DecisionInvariantToScaleProperty) {
  Rng rng(3);
  ClassifierHead<double> head(7, 5, 2);
  for (int trial = 0; trial < 100; ++trial) {
    auto f = random_directions(rng, 1, 5);
    std::vector<int> y{0};
    auto a = softmax_classification_loss<double>(f, y, head, true, 16.0);
    const Matrix<double> g = (0.01 + 100.0 * rng.uniform()) * f;
    auto b = softmax_classification_loss<double>(g, y, head, true, 16.0);
    Eigen::Index ia, ib;
    a.logits.row(0).maxCoeff(&ia);
    b.logits.row(0).maxCoeff(&ib);
    ASSERT_EQ(ia, ib);
  }
}

TEST(Angular, Examples) {
  EXPECT_NEAR(angular({1, 2, 3}, {2, 4, 6}), 0.0, 1e-15);
  EXPECT_NEAR(angular({1, 0}, {0, 3}), 1.0, 1e-15);
  EXPECT_NEAR(angular({1, 1}, {-2, -2}), 4.0, 1e-12);
  EXPECT_THROW(angular({0, 0}, {1, 0}), DegenerateInput);
  EXPECT_THROW(angular({1, 0}, {0, 0}), DegenerateInput);
  EXPECT_THROW(angular({1, 0}, {1, 0, 0}), InvalidInput);
}

TEST(Angular, BatchIsMeanOfRows) {
  Rng rng(4);
  auto t = random_directions(rng, 5, 6), s = random_directions(rng, 5, 6);
  double mean = 0.0;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> a(t.row(i).begin(), t.row(i).end()), b(s.row(i).begin(), s.row(i).end());
    mean += angular(a, b) / 5.0;
  }
  EXPECT_NEAR(angular_distillation_loss(t, s).value, mean, 1e-12);
}

TEST(Angular, InvariantsProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(20));
    std::vector<double> t(d), s(d);
    for (auto& v : t) v = rng.normal();
    for (auto& v : s) v = rng.normal();
    const double l = angular(t, s);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 4.0);
    ASSERT_NEAR(angular(s, t), l, 1e-12);
    const double a = 0.01 + 100.0 * rng.uniform(), b = 0.01 + 100.0 * rng.uniform();
    auto ta = t, sb = s;
    for (auto& v : ta) v *= a;
    for (auto& v : sb) v *= b;
    ASSERT_NEAR(angular(ta, sb), l, 1e-6);
    ASSERT_NEAR(angular(t, t), 0.0, 1e-12);
  }
}

TEST(L2, Examples) {
  Matrix<double> a(1, 3), b(1, 3);
  a << 1, 2, 3;
  b << 1, 2, 3;
  EXPECT_EQ(l2_distillation_loss(a, b).value, 0.0);
  b << 1, 2, 4;
  EXPECT_EQ(l2_distillation_loss(a, b).value, 1.0);
  EXPECT_THROW(l2_distillation_loss(a, Matrix<double>(1, 2)), InvalidInput);
}

TEST(L2, MatchesHandComputation) {
  Rng rng(6);
  auto t = random_matrix(rng, 4, 7), s = random_matrix(rng, 4, 7);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 7; ++k) expect += (t(i, k) - s(i, k)) * (t(i, k) - s(i, k)) / 4.0;
  EXPECT_NEAR(l2_distillation_loss(t, s).value, expect, 1e-12);
}

class IntermediateTest : public ::testing::Test {
 protected:
  IntermediateTest() : teacher(NetworkSpec::from_widths({4, 6, 8}, 8, 8), 3) {}
  Network<double> teacher;
};

TEST_F(IntermediateTest, ExactMatchIsZero) {
  Rng rng(7);
  auto out = teacher.infer(test::random_tensor(rng, 3, 1, 8, 8));
  auto tail = teacher_tail(teacher, 1);
  auto h = make_adapter<double>({AdapterKind::identity, 4, 4});
  StageFeature<double> ft{out.taps[0].data, 1, FeatureSource::teacher_recognition};
  StageFeature<double> fs{out.taps[0].data, 1, FeatureSource::student};
  EXPECT_NEAR(intermediate_angular_loss(ft, fs, h, tail).value, 0.0, 1e-12);
  EXPECT_NEAR(intermediate_angular_loss_value(ft, ft, h, tail), 0.0, 1e-12);
}

TEST_F(IntermediateTest, MatchesExplicitComposition) {
  Rng rng(8);
  auto out = teacher.infer(test::random_tensor(rng, 3, 1, 8, 8));
  auto tail = teacher_tail(teacher, 2);
  auto h = make_adapter<double>({AdapterKind::channel_projection, 3, 6, Normalization::batch_norm}, 4);
  StageFeature<double> ft{out.taps[1].data, 2, FeatureSource::teacher_recognition};
  StageFeature<double> fs{test::random_tensor(rng, 3, 3, 4, 4), 2, FeatureSource::student};

  // By hand: project, push both through stage 3 and the head, compare rows.
  auto zs = tail(h.infer(fs.data)), zt = tail(ft.data);
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double c = zs.row(i).dot(zt.row(i)) / (zs.row(i).norm() * zt.row(i).norm());
    expect += (1.0 - c) * (1.0 - c) / 3.0;
  }
  EXPECT_NEAR(intermediate_angular_loss(ft, fs, h, tail, Phase::inference).value, expect, 1e-10);
  EXPECT_NEAR(intermediate_angular_loss_value(ft, fs, h, tail), expect, 1e-10);
}

TEST(LambdaSchedule, Halving) {
  auto s = lambda_schedule(1.0, 4);
  ASSERT_EQ(s.lambda_intermediate.size(), 3u);
  EXPECT_DOUBLE_EQ(s.lambda_intermediate[0], 0.125);
  EXPECT_DOUBLE_EQ(s.lambda_intermediate[1], 0.25);
  EXPECT_DOUBLE_EQ(s.lambda_intermediate[2], 0.5);
  EXPECT_DOUBLE_EQ(s.lambda_A, 0.1);
  for (double v : lambda_schedule(0.0, 4).lambda_intermediate) EXPECT_EQ(v, 0.0);
  auto two = lambda_schedule(0.8, 2);
  ASSERT_EQ(two.lambda_intermediate.size(), 1u);
  EXPECT_DOUBLE_EQ(two.lambda_intermediate[0], 0.4);
  EXPECT_THROW(lambda_schedule(1.0, 1), ConfigError);
  EXPECT_THROW(lambda_schedule(-1.0, 4), ConfigError);
}

TEST(LambdaSchedule, ModeDefaults) {
  EXPECT_DOUBLE_EQ(default_schedule(DistillMode::l2).lambda_n, 0.001);
  EXPECT_DOUBLE_EQ(default_schedule(DistillMode::ad).lambda_n, 1.0);
  EXPECT_DOUBLE_EQ(default_schedule(DistillMode::aad).lambda_A, 0.1);
  EXPECT_DOUBLE_EQ(default_schedule(DistillMode::self).lambda_n, 0.0);
  for (auto m : {DistillMode::self, DistillMode::l2, DistillMode::ad, DistillMode::aad})
    EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_THROW(parse_mode("KD"), ConfigError);
}

TEST(TotalLoss, ZeroDistillationLeavesClassification) {
  LossTerms t;
  t.classification = 1.7;
  t.final_angular = 0.0;
  t.intermediate = {0.0, 0.0, 0.0};
  t.attentive = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(t, default_schedule(DistillMode::aad), DistillMode::aad).total, 1.7);
  t.final_angular = 0.3;
  t.intermediate = {0.2, 0.4, 0.9};
  t.attentive = 5.0;
  EXPECT_DOUBLE_EQ(total_loss(t, lambda_schedule(0.0, 4, 0.0), DistillMode::aad).total, 1.7);
  EXPECT_DOUBLE_EQ(total_loss(t, default_schedule(DistillMode::self), DistillMode::self).total, 1.7);
}

TEST(TotalLoss, MissingTermsRejected) {
  LossTerms t;
  t.classification = 1.0;
  EXPECT_THROW(total_loss(t, default_schedule(DistillMode::l2), DistillMode::l2), ConfigError);
  EXPECT_THROW(total_loss(t, default_schedule(DistillMode::ad), DistillMode::ad), ConfigError);
  t.final_angular = 0.1;
  t.intermediate = {0.1, 0.1};
  EXPECT_THROW(total_loss(t, default_schedule(DistillMode::ad), DistillMode::ad), ConfigError);
  t.intermediate = {0.1, 0.1, 0.1};
  EXPECT_NO_THROW(total_loss(t, default_schedule(DistillMode::ad), DistillMode::ad));
  EXPECT_THROW(total_loss(t, default_schedule(DistillMode::aad), DistillMode::aad), ConfigError);
}

TEST(TotalLoss, BreakdownSumsToTotalProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    LossTerms t;
    t.classification = 5.0 * rng.uniform();
    t.l2 = 50.0 * rng.uniform();
    t.final_angular = 4.0 * rng.uniform();
    t.intermediate = {4.0 * rng.uniform(), 4.0 * rng.uniform(), 4.0 * rng.uniform()};
    t.attentive = 100.0 * rng.uniform();
    const auto mode = static_cast<DistillMode>(rng.below(4));
    auto s = lambda_schedule(2.0 * rng.uniform(), 4, rng.uniform());
    auto b = total_loss(t, s, mode);
    double sum = 0.0;
    for (const auto& term : b.terms) {
      ASSERT_DOUBLE_EQ(term.weighted, term.raw * term.weight);
      sum += term.weighted;
    }
    ASSERT_NEAR(sum, b.total, 1e-9);
    ASSERT_EQ(b.terms.front().name, "classification");
  }
}

TEST(LossGradients, ClassificationPlain) {
  auto r = test::check_classification(20, 701, false);
  EXPECT_TRUE(r.passed()) << "worst " << r.worst;
}

TEST(LossGradients, ClassificationNormalized) {
  auto r = test::check_classification(20, 702, true);
  EXPECT_TRUE(r.passed()) << "worst " << r.worst;
}

TEST(LossGradients, Angular) {
  auto r = test::check_angular(20, 703);
  EXPECT_TRUE(r.passed()) << "worst " << r.worst;
}

TEST(LossGradients, L2) {
  auto r = test::check_l2(20, 704);
  EXPECT_TRUE(r.passed()) << "worst " << r.worst;
}

TEST(LossGradients, Intermediate) {
  auto r = test::check_intermediate(20, 705);
  EXPECT_TRUE(r.passed()) << "worst " << r.worst << " skipped " << r.skipped;
}

}  // namespace
}  // namespace aad
