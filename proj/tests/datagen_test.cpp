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
#include <limits>

#include "aad/datagen.hpp"
#include "aad/params.hpp"
#include "test_util.hpp"

namespace aad {
namespace {

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s / static_cast<double>(a.size());
}

double cosine(const Image& a, const Image& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

DatasetManifest small(Split split, int ids, int per, int offset, std::uint64_t seed = 0) {
  DatasetManifest m;
  m.split = split;
  m.identities = ids;
  m.samples_per_identity = per;
  m.identity_offset = offset;
  m.seed = seed;
  return m;
}

TEST(GenerateIdentity, Deterministic) {
  auto a = generate_identity(42), b = generate_identity(42);
  EXPECT_EQ(a.image, b.image);
  EXPECT_NE(generate_identity(43).image, a.image);
}

TEST(GenerateIdentity, GoldenChecksum) {
  auto g = generate_identity(0);
  ASSERT_EQ(g.image.size(), static_cast<std::size_t>(kImagePixels));
  EXPECT_EQ(fnv1a(std::span<const double>(g.image)), 17155118194525346347ULL);
}

TEST(GenerateIdentity, PixelRange) {
  for (std::uint64_t s = 0; s < 20; ++s)
    for (double v : generate_identity(s).image) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(GenerateIdentity, DistinctSeedsAreDissimilarOnAverage) {
  std::vector<Glyph> gs;
  for (std::uint64_t s = 0; s < 40; ++s) gs.push_back(generate_identity(identity_seed(0, s)));
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < gs.size(); ++a)
    for (std::size_t b = a + 1; b < gs.size(); ++b, ++pairs) sum += cosine(gs[a].image, gs[b].image);
  EXPECT_LT(sum / pairs, 0.99);
}

TEST(GenerateIdentity, HundredIdentitiesNearestNeighbourDistinguishable) {
  // Query: an aged sample of each identity; gallery: the 100 base glyphs.
  std::vector<Glyph> gs;
  for (int s = 0; s < 100; ++s) gs.push_back(generate_identity(identity_seed(7, s)));
  Rng rng(1);
  int hits = 0;
  for (int q = 0; q < 100; ++q) {
    auto aged = apply_age(gs[q], rng.uniform(0.0, 0.5), sample_noise_seed(7, q, 0));
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int g = 0; g < 100; ++g) {
      double d = 0.0;
      for (int k = 0; k < kImagePixels; ++k) d += (aged.image[k] - gs[g].image[k]) * (aged.image[k] - gs[g].image[k]);
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    hits += best == q;
  }
  EXPECT_GE(hits, 95);
}

TEST(ApplyAge, ZeroAgeIsIdentity) {
  auto g = generate_identity(3);
  auto a = apply_age(g, 0.0, 99);
  EXPECT_EQ(a.image, g.image);
  for (auto m : a.mask) ASSERT_EQ(m, 0);
}

TEST(ApplyAge, OutOfRangeRejected) {
  auto g = generate_identity(3);
  EXPECT_THROW(apply_age(g, -0.01, 1), InvalidInput);
  EXPECT_THROW(apply_age(g, 1.01, 1), InvalidInput);
  EXPECT_THROW(apply_age(g, std::nan(""), 1), InvalidInput);
}

TEST(ApplyAge, MaskSupportMonotone) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto g = generate_identity(s);
    auto half = apply_age(g, 0.5, s + 100), full = apply_age(g, 1.0, s + 100);
    for (int k = 0; k < kImagePixels; ++k)
      if (half.mask[k]) ASSERT_TRUE(full.mask[k]) << "seed " << s << " pixel " << k;
  }
}

TEST(ApplyAge, DeformationStrictlyIncreasing) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto g = generate_identity(s);
    double prev = -1.0;
    for (double age : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double d = mean_abs_diff(apply_age(g, age, 7).image, g.image);
      ASSERT_GT(d, prev) << "seed " << s << " age " << age;
      prev = d;
    }
  }
}

TEST(ApplyAge, MaskMatchesDefinitionAndAgeProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = generate_identity(rng.next());
    const double age = trial % 10 == 0 ? 0.0 : rng.uniform(1e-3, 1.0);
    auto a = apply_age(g, age, rng.next());
    int support = 0;
    for (int k = 0; k < kImagePixels; ++k) {
      ASSERT_EQ(a.mask[k] != 0, std::abs(a.image[k] - g.image[k]) > 1e-6);
      ASSERT_TRUE(a.image[k] >= 0.0 && a.image[k] <= 1.0);
      support += a.mask[k];
    }
    ASSERT_EQ(support > 0, age > 0.0) << "age " << age;
  }
}

TEST(ApplyAge, IdentityAgeFactorization) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = generate_identity(rng.next());
    auto a = apply_age(g, rng.uniform(), rng.next()), b = apply_age(g, rng.uniform(), rng.next());
    for (int k = 0; k < kImagePixels; ++k)
      if (!a.mask[k] && !b.mask[k]) ASSERT_EQ(a.image[k], b.image[k]);
  }
}

TEST(BuildDataset, CountsAndLabels) {
  auto ds = build_dataset(small(Split::recognition_train, 100, 20, 0));
  EXPECT_EQ(ds.size(), 2000);
  EXPECT_EQ(ds.images.n, 2000);
  EXPECT_EQ(ds.masks.size(), 2000u * kImagePixels);
  EXPECT_EQ(ds.labels.front(), 0);
  EXPECT_EQ(ds.labels.back(), 99);
  for (int i = 0; i < ds.size(); ++i) {
    ASSERT_GE(ds.ages[i], 0.0f);
    ASSERT_LE(ds.ages[i], 1.0f);
  }
}

TEST(BuildDataset, AgeRangeAndDistractors) {
  auto m = small(Split::eval, 5, 6, 10);
  m.age_min = 0.2;
  m.age_max = 0.6;
  m.distractors = 7;
  auto ds = build_dataset(m);
  EXPECT_EQ(ds.size(), 37);
  for (int i = 0; i < ds.size(); ++i) {
    ASSERT_GE(ds.ages[i], 0.2f);
    ASSERT_LE(ds.ages[i], 0.6f);
  }
  for (int i = 30; i < 37; ++i) EXPECT_EQ(ds.labels[i], -1);
  EXPECT_EQ(ds.identities[36], 10 + 5 + 6);
  auto bad = small(Split::recognition_train, 5, 6, 0);
  bad.distractors = 1;
  EXPECT_THROW(build_dataset(bad), ConfigError);
}

TEST(BuildDataset, DeterministicPerSeed) {
  auto a = build_dataset(small(Split::age_train, 6, 5, 0, 3));
  auto b = build_dataset(small(Split::age_train, 6, 5, 0, 3));
  auto c = build_dataset(small(Split::age_train, 6, 5, 0, 4));
  EXPECT_EQ(a.images.data, b.images.data);
  EXPECT_EQ(a.ages, b.ages);
  EXPECT_NE(a.images.data, c.images.data);
}

TEST(BuildDataset, SamplesIndependentOfIdentityCount) {
  auto a = build_dataset(small(Split::age_train, 3, 4, 20));
  auto b = build_dataset(small(Split::age_train, 8, 4, 20));
  for (std::size_t k = 0; k < a.images.data.size(); ++k) ASSERT_EQ(a.images.data[k], b.images.data[k]);
}

TEST(BuildDataset, ArchiveRoundTrip) {
  test::TempDir dir;
  auto m = small(Split::eval, 4, 3, 50);
  m.distractors = 2;
  auto ds = build_dataset(m);
  save_archive(ds, dir.path() / "eval");
  auto back = load_archive(dir.path() / "eval");
  EXPECT_EQ(back.images.data, ds.images.data);
  EXPECT_EQ(back.masks, ds.masks);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.identities, ds.identities);
  EXPECT_EQ(back.ages, ds.ages);
  EXPECT_EQ(back.noise_seeds, ds.noise_seeds);
  EXPECT_EQ(back.manifest.distractors, 2);
  EXPECT_EQ(back.manifest.identity_offset, 50);
}

TEST(BuildDataset, LoadRejectsForeignDirectory) {
  test::TempDir dir;
  test::write_text(dir.path() / "manifest.json", R"({"format": "other"})");
  EXPECT_THROW(load_archive(dir.path()), InvalidInput);
}

TEST(BuildDataset, OverlappingSplitsRejected) {
  auto rec = small(Split::recognition_train, 10, 2, 0);
  auto age = small(Split::age_train, 10, 2, 5);
  EXPECT_THROW(build_dataset(age, {rec}), InvalidInput);
  age.identity_offset = 10;
  EXPECT_NO_THROW(build_dataset(age, {rec}));
  EXPECT_THROW(check_disjoint({rec, small(Split::eval, 1, 1, 9)}), InvalidInput);
}

TEST(BuildDataset, DatasetMaskNonzeroIffAgePositive) {
  auto ds = build_dataset(small(Split::eval, 10, 10, 0, 1));
  for (int i = 0; i < ds.size(); ++i) {
    int support = 0;
    for (int k = 0; k < kImagePixels; ++k) support += ds.masks[i * kImagePixels + k];
    ASSERT_EQ(support > 0, ds.ages[i] > 0.0f);
  }
}

}  // namespace
}  // namespace aad
