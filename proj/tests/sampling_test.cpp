// Copyright 2026 The MML Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mml/sampling.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"

namespace mml {
namespace {

std::set<std::pair<int, int>> as_set(const std::vector<SimilarPair>& pairs) {
  std::set<std::pair<int, int>> out;
  for (const auto& p : pairs) out.insert({p.a, p.b});
  return out;
}

Model identity_model(int m, int n, int k, std::uint64_t seed) {
  Model model;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  model.embeddings.num_users = m;
  model.embeddings.num_items = n;
  model.embeddings.vectors.resize(m + n, k);
  for (Eigen::Index i = 0; i < model.embeddings.vectors.size(); ++i) model.embeddings.vectors.data()[i] = u(rng);
  model.metrics = MetricSet::identity(k);
  model.margins = MarginSet::constant(m, n);
  return model;
}

TEST(SimilarPairs, HandJaccard) {
  // list(a) = {1,2,3}, list(b) = {2,3,4}: 2/4 = 0.5 > 0.3.
  const RatingDataset data(3, 5, {{0, 1, 4}, {0, 2, 4}, {0, 3, 4}, {1, 2, 4}, {1, 3, 4}, {1, 4, 4}, {2, 0, 5}});
  const auto sets = build_similar_pair_sets(data, 0.3);
  ASSERT_EQ(sets.pairs(EntityKind::user).size(), 1u);
  EXPECT_EQ(sets.pairs(EntityKind::user)[0].a, 0);
  EXPECT_EQ(sets.pairs(EntityKind::user)[0].b, 1);
  EXPECT_DOUBLE_EQ(sets.pairs(EntityKind::user)[0].jaccard, 0.5);
  EXPECT_TRUE(sets.contains(EntityKind::user, 1, 0));
  EXPECT_FALSE(sets.contains(EntityKind::user, 0, 2));  // disjoint lists
  EXPECT_TRUE(build_similar_pair_sets(data, 0.5).pairs(EntityKind::user).empty());  // strict threshold
}

TEST(SimilarPairs, IdenticalListsAlwaysPaired) {
  const RatingDataset data(2, 2, {{0, 0, 4}, {0, 1, 4}, {1, 0, 4}, {1, 1, 4}});
  EXPECT_EQ(build_similar_pair_sets(data, 0.99).pairs(EntityKind::user).size(), 1u);
  EXPECT_EQ(build_similar_pair_sets(data, 0.99).pairs(EntityKind::item).size(), 1u);
}

TEST(SimilarPairs, RejectsThetaOutsideUnitInterval) {
  const RatingDataset data(1, 1, {{0, 0, 4}});
  EXPECT_THROW(build_similar_pair_sets(data, 0.0), ValidationError);
  EXPECT_THROW(build_similar_pair_sets(data, 1.0), ValidationError);
}

TEST(SimilarPairs, MatchesBruteForceOracle) {
  Rng rng(21);
  std::uniform_int_distribution<int> size(2, 50);
  std::uniform_real_distribution<double> density(0.05, 0.5), theta(0.05, 0.8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = testing::random_dataset(size(rng), size(rng), density(rng), rng);
    const double t = theta(rng);
    const auto sets = build_similar_pair_sets(data, t);
    for (EntityKind kind : {EntityKind::user, EntityKind::item}) {
      EXPECT_EQ(as_set(sets.pairs(kind)), oracle::jaccard_pairs(data, kind, t)) << "trial " << trial;
      for (const auto& p : sets.pairs(kind)) EXPECT_LT(p.a, p.b);
    }
  }
}

TEST(SimilarPairs, AuditDump) {
  const RatingDataset data(2, 2, {{0, 0, 4}, {1, 0, 4}});
  std::ostringstream out;
  write_similar_pairs(out, build_similar_pair_sets(data, 0.3));
  EXPECT_EQ(out.str(), "kind,id_a,id_b,jaccard\nuser,0,1,1\n");
}

TEST(PositiveBatch, SizeMembershipAndDeterminism) {
  Rng rng(1);
  const auto data = testing::random_dataset(30, 30, 0.2, rng);
  Rng a(5), b(5);
  const auto batch = sample_positive_batch(data, 512, a);
  EXPECT_EQ(batch.size(), 512u);
  for (const auto& p : batch) EXPECT_TRUE(data.is_positive(p.user, p.item));
  EXPECT_EQ(batch, sample_positive_batch(data, 512, b));
  const RatingDataset single(1, 1, {{0, 0, 5}});
  EXPECT_EQ(sample_positive_batch(single, 1, a), (std::vector<UserItem>{{0, 0}}));
  EXPECT_THROW(sample_positive_batch(RatingDataset(1, 1, {{0, 0, 1}}), 1, a), EmptyDatasetError);
}

TEST(DualTriplet, ForcedByExclusion) {
  const RatingDataset data(2, 2, {{0, 0, 4}, {1, 1, 4}});
  const auto model = identity_model(2, 2, 3, 1);
  Rng rng(3);
  const auto t = sample_dual_triplet({0, 0}, data, model, 10, rng);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->b, 1);
  EXPECT_EQ(t->d, 1);
}

TEST(DualTriplet, SkipWhenNoNegativeExists) {
  const RatingDataset data(2, 2, {{0, 0, 4}, {0, 1, 4}});
  const auto model = identity_model(2, 2, 3, 1);
  Rng rng(3);
  EXPECT_FALSE(sample_dual_triplet({0, 0}, data, model, 10, rng));
}

TEST(DualTriplet, FullPoolMatchesBruteForceArgmax) {
  Rng rng(8);
  const auto data = testing::random_dataset(20, 20, 0.3, rng);
  auto model = identity_model(20, 20, 4, 2);
  model.metrics.w_user_item = project_psd(Matrix::Random(4, 4)) + 0.1 * Matrix::Identity(4, 4);
  for (const auto& [a, c] : data.positive_pairs()) {
    const auto t = sample_dual_triplet({a, c}, data, model, 20, rng);
    ASSERT_TRUE(t);
    const auto [best_b, best_d] = oracle::farthest_negatives(data, model, a, c);
    EXPECT_EQ(t->b, best_b);
    EXPECT_EQ(t->d, best_d);
  }
}

TEST(DualTriplet, EveryEmittedTripletSatisfiesMembership) {
  Rng rng(9);
  const auto data = testing::random_dataset(40, 35, 0.25, rng);
  const auto model = identity_model(40, 35, 4, 3);
  int emitted = 0;
  for (const auto& pair : sample_positive_batch(data, 2000, rng)) {
    const auto t = sample_dual_triplet(pair, data, model, 10, rng);
    if (!t) continue;
    ++emitted;
    EXPECT_TRUE(data.is_positive(t->a, t->c));
    EXPECT_FALSE(data.is_positive(t->b, t->c));
    EXPECT_FALSE(data.is_positive(t->a, t->d));
    EXPECT_EQ(t->user_candidates.size(), 10u);
    for (int b : t->user_candidates) EXPECT_FALSE(data.is_positive(b, t->c));
    for (int d : t->item_candidates) EXPECT_FALSE(data.is_positive(t->a, d));
  }
  EXPECT_GT(emitted, 1900);
}

TEST(DualTriplet, LowRatingsCountAsNegatives) {
  const RatingDataset data(2, 2, {{0, 0, 4}, {0, 1, 2}, {1, 0, 4}, {1, 1, 4}});
  const auto model = identity_model(2, 2, 3, 1);
  Rng rng(3);
  const auto t = sample_dual_triplet({0, 0}, data, model, 4, rng);
  EXPECT_FALSE(t);  // item 1 is a negative for user 0, but every user rated item 0
  const RatingDataset other(3, 2, {{0, 0, 4}, {0, 1, 2}, {1, 0, 4}, {2, 1, 4}});
  const auto model3 = identity_model(3, 2, 3, 1);
  const auto t2 = sample_dual_triplet({0, 0}, other, model3, 4, rng);
  ASSERT_TRUE(t2);
  EXPECT_EQ(t2->d, 1);
  EXPECT_EQ(t2->b, 2);
}

TEST(LatentTriplet, SinglePartnerAndSkip) {
  const SimilarPairSets sets(0.3, 4, 0, {{0, 1, 0.5}}, {});
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto t = sample_latent_triplet(0, sets, EntityKind::user, rng);
    ASSERT_TRUE(t);
    EXPECT_EQ(t->f, 1);
    EXPECT_NE(t->g, 0);
    EXPECT_NE(t->g, 1);
  }
  EXPECT_FALSE(sample_latent_triplet(2, sets, EntityKind::user, rng));
}

TEST(LatentTriplet, DissimilarDrawIsUniform) {
  // Anchor 0 partnered with 1 and 2; eligible g are 3..9.
  const SimilarPairSets sets(0.3, 10, 0, {{0, 1, 0.5}, {0, 2, 0.5}, {3, 4, 0.9}}, {});
  Rng rng(5);
  constexpr int kDraws = 10000;
  std::map<int, int> counts;
  for (int i = 0; i < kDraws; ++i) ++counts[sample_latent_triplet(0, sets, EntityKind::user, rng)->g];
  ASSERT_EQ(counts.size(), 7u);
  const double p = 1.0 / 7.0, mean = kDraws * p, sigma = std::sqrt(kDraws * p * (1 - p));
  for (const auto& [g, c] : counts) {
    EXPECT_GE(g, 3);
    EXPECT_NEAR(c, mean, 3 * sigma) << "g=" << g;
  }
}

}  // namespace
}  // namespace mml
