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


#include "mml/evaluation.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"

namespace mml {
namespace {

RowMatrix random_rows(int n, int dim, Rng& rng) {
  std::normal_distribution<double> g;
  RowMatrix rows(n, dim);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = g(rng);
  return rows;
}

Model random_model(int m, int n, int dim, Rng& rng) {
  Model model;
  model.embeddings.num_users = m;
  model.embeddings.num_items = n;
  model.embeddings.vectors = random_rows(m + n, dim, rng) * 0.3;
  model.metrics = MetricSet::identity(dim);
  model.margins = MarginSet::constant(m, n, 0.02);
  return model;
}

RankingRow row(std::vector<int> ranked, std::vector<int> relevant, int candidates = 100) {
  RankingRow r;
  r.ranked.items = std::move(ranked);
  r.ranked.num_candidates = candidates;
  std::sort(relevant.begin(), relevant.end());
  r.relevant = std::move(relevant);
  return r;
}

TEST(SphericalKMeans, AntipodalGroupsSeparate) {
  RowMatrix rows(8, 3);
  for (int i = 0; i < 8; ++i) rows.row(i) << (i < 4 ? 1.0 : -1.0) * 2.0, (i < 4 ? 0.5 : -0.5), 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto result = spherical_kmeans(rows, 2, seed);
    for (int i = 1; i < 8; ++i) EXPECT_EQ(result.clusters[i] == result.clusters[0], i < 4);
    EXPECT_NEAR(result.objective_history.back(), 0.0, 1e-12);
  }
}

TEST(SphericalKMeans, DistinctCountClustersAreSingletons) {
  Rng rng(3);
  const RowMatrix rows = random_rows(6, 4, rng);
  const auto result = spherical_kmeans(rows, 6, 9);
  EXPECT_EQ(std::set<int>(result.clusters.begin(), result.clusters.end()).size(), 6u);
  EXPECT_NEAR(result.objective_history.back(), 0.0, 1e-12);
}

TEST(SphericalKMeans, ObjectiveNeverIncreases) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrix rows = random_rows(120, 5, rng);
    const auto result = spherical_kmeans(rows, 7, trial);
    ASSERT_FALSE(result.objective_history.empty());
    for (std::size_t i = 1; i < result.objective_history.size(); ++i)
      EXPECT_LE(result.objective_history[i], result.objective_history[i - 1] + 1e-9);
    for (int c : result.clusters) EXPECT_TRUE(c >= 0 && c < 7);
    for (Eigen::Index k = 0; k < result.centroids.rows(); ++k) EXPECT_NEAR(result.centroids.row(k).norm(), 1.0, 1e-12);
  }
}

TEST(SphericalKMeans, ScaleInvariantAndDeterministic) {
  Rng rng(5);
  const RowMatrix rows = random_rows(50, 4, rng);
  RowMatrix scaled = rows;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) scaled.row(r) *= 0.1 + r;
  EXPECT_EQ(spherical_kmeans(rows, 4, 1).clusters, spherical_kmeans(scaled, 4, 1).clusters);
  EXPECT_EQ(spherical_kmeans(rows, 4, 1).clusters, spherical_kmeans(rows, 4, 1).clusters);
}

TEST(SphericalKMeans, Errors) {
  RowMatrix rows = RowMatrix::Ones(5, 2);
  rows.row(4) << 1.0, -1.0;
  EXPECT_THROW(spherical_kmeans(rows, 3, 1), ValidationError);  // two distinct rows
  EXPECT_NO_THROW(spherical_kmeans(rows, 2, 1));
  EXPECT_THROW(spherical_kmeans(rows, 1, 1), ValidationError);
  RowMatrix with_zero = RowMatrix::Zero(3, 2);
  with_zero.row(1) << 0, 1;
  with_zero.row(2) << 0, -1;
  EXPECT_NO_THROW(spherical_kmeans(with_zero, 3, 1));
}

TEST(Nmi, PerfectAgreementIsOne) {
  ClusterAssignment a{{0, 0, 1, 1, 2, 2}, {2, 2, 0, 0, 1, 1}, 3};
  EXPECT_NEAR(nmi(a), 1.0, 1e-12);
}

TEST(Nmi, IndependentTablesAreZero) {
  EXPECT_NEAR(nmi({{0, 0, 1, 1}, {0, 1, 0, 1}, 2}), 0.0, 1e-15);
  // 3x2 product distribution.
  ClusterAssignment product;
  product.K = 2;
  for (int l = 0; l < 3; ++l)
    for (int c = 0; c < 2; ++c)
      for (int rep = 0; rep < (c == 0 ? 2 : 3); ++rep) {
        product.labels.push_back(l);
        product.clusters.push_back(c);
      }
  EXPECT_NEAR(nmi(product), 0.0, 1e-12);
}

TEST(Nmi, HandComputedTwoByTwo) {
  // Table [[2,0],[1,1]].
  const ClusterAssignment a{{0, 0, 1, 1}, {0, 0, 0, 1}, 2};
  const double mi = 0.5 * std::log(4.0 / 3.0) + 0.25 * std::log(2.0 / 3.0) + 0.25 * std::log(2.0);
  const double h_l = std::log(2.0);
  const double h_c = -0.75 * std::log(0.75) - 0.25 * std::log(0.25);
  EXPECT_NEAR(nmi(a), mi / ((h_l + h_c) / 2.0), 1e-12);
  const auto table = contingency_table(a);
  EXPECT_EQ(table.at({0, 0}), 2);
  EXPECT_EQ(table.at({1, 0}), 1);
  EXPECT_EQ(table.at({1, 1}), 1);
  EXPECT_FALSE(table.contains({0, 1}));
}

TEST(Nmi, DegenerateInputsAreZero) {
  EXPECT_EQ(nmi({{0, 0, 0}, {1, 1, 1}, 2}), 0.0);
  EXPECT_EQ(nmi({{}, {}, 2}), 0.0);
  EXPECT_EQ(nmi({{0, 1, 2}, {0, 0, 0}, 2}), 0.0);
  EXPECT_THROW(nmi({{0, 1}, {0}, 2}), ValidationError);
}

TEST(Nmi, SymmetricBoundedAndPermutationInvariant) {
  Rng rng(6);
  std::uniform_int_distribution<int> label(0, 3), cluster(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    ClusterAssignment a;
    a.K = 5;
    for (int i = 0; i < 40; ++i) {
      a.labels.push_back(label(rng));
      a.clusters.push_back(trial % 2 ? cluster(rng) : a.labels.back());
    }
    const double value = nmi(a);
    EXPECT_GE(value, 0.0);
    EXPECT_LE(value, 1.0);
    EXPECT_NEAR(value, nmi({a.clusters, a.labels, 4}), 1e-12);
    std::vector<int> perm{3, 0, 4, 1, 2};
    ClusterAssignment permuted = a;
    for (int& c : permuted.clusters) c = perm[c];
    EXPECT_NEAR(value, nmi(permuted), 1e-12);
  }
}

TEST(ItemVectors, MetricSpaceReproducesItemDistances) {
  Rng rng(7);
  Model model = random_model(3, 6, 4, rng);
  const Matrix a = random_rows(4, 4, rng);
  model.metrics.w_item = a.transpose() * a;
  const RowMatrix raw = item_vectors(model, EmbeddingSpace::raw);
  const RowMatrix mapped = item_vectors(model);
  EXPECT_EQ(raw, model.embeddings.vectors.bottomRows(6));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      EXPECT_NEAR((mapped.row(i) - mapped.row(j)).squaredNorm(),
                  squared_w_distance(model.embeddings.item(i), model.embeddings.item(j), model.metrics.w_item), 1e-10);
  model.metrics.w_item = Matrix::Identity(4, 4);
  EXPECT_LE((item_vectors(model) - raw).norm(), 1e-15);
}

TEST(Recommend, IdenticalUsersShareItems) {
  Model model;
  model.embeddings.num_users = 3;
  model.embeddings.num_items = 3;
  model.embeddings.vectors.resize(6, 2);
  model.embeddings.vectors << 0.1, 0.2, 0.1, 0.2, -0.8, 0.1, 0, 0, 0, 0, 0, 0;
  model.metrics = MetricSet::identity(2);
  const RatingDataset train(3, 3, {{0, 0, 5}, {0, 1, 5}, {1, 0, 4}, {2, 2, 5}});
  const auto list = recommend_topk(model, train, 1, 1, RecommenderMode::ubcf);
  ASSERT_TRUE(list);
  ASSERT_EQ(list->items.size(), 1u);
  EXPECT_EQ(list->items[0], 1);
  EXPECT_NEAR(list->scores[0], 1.0, 1e-15);
}

TEST(Recommend, IbcfWithIdentityMatchesBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Model model = random_model(5, 5, 3, rng);
    const RatingDataset train = testing::random_dataset(5, 5, 0.4, rng);
    for (int u = 0; u < 5; ++u) {
      const auto list = recommend_topk(model, train, u, 5, RecommenderMode::ibcf);
      std::vector<int> positives;
      for (int i = 0; i < 5; ++i)
        if (train.is_positive(u, i)) positives.push_back(i);
      if (positives.empty()) {
        EXPECT_FALSE(list);
        continue;
      }
      std::vector<std::pair<double, int>> expected;
      for (int i = 0; i < 5; ++i) {
        if (std::count(positives.begin(), positives.end(), i)) continue;
        double sum = 0.0;
        for (int j : positives) {
          double sq = 0.0;
          for (int d = 0; d < 3; ++d) {
            const double diff = model.embeddings.vectors(5 + i, d) - model.embeddings.vectors(5 + j, d);
            sq += diff * diff;
          }
          sum += std::sqrt(sq);
        }
        expected.emplace_back(sum / static_cast<double>(positives.size()), i);
      }
      std::sort(expected.begin(), expected.end());
      ASSERT_TRUE(list);
      ASSERT_EQ(list->items.size(), expected.size());
      for (std::size_t r = 0; r < expected.size(); ++r) {
        EXPECT_EQ(list->items[r], expected[r].second);
        EXPECT_NEAR(list->scores[r], -expected[r].first, 1e-12);
      }
    }
  }
}

TEST(Recommend, ShortCandidateListIsNotPadded) {
  Rng rng(9);
  const Model model = random_model(2, 4, 2, rng);
  const RatingDataset train(2, 4, {{0, 0, 5}, {0, 1, 5}, {1, 2, 5}});
  for (auto mode : {RecommenderMode::ubcf, RecommenderMode::ibcf}) {
    const auto list = recommend_topk(model, train, 0, 50, mode);
    ASSERT_TRUE(list);
    EXPECT_EQ(list->items.size(), 2u);
    EXPECT_EQ(list->num_candidates, 2);
    for (int i : list->items) EXPECT_FALSE(train.is_positive(0, i));
  }
}

TEST(Recommend, RankingInvariantUnderPositiveScaling) {
  Rng rng(10);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> scores(30);
    for (double& s : scores) s = unit(rng);
    std::vector<double> scaled = scores;
    const double c = 0.01 + 10.0 * trial;
    for (double& s : scaled) s *= c;
    const std::vector<int> excluded{3, 7, 8};
    EXPECT_EQ(rank_candidates(scores, excluded, 10).items, rank_candidates(scaled, excluded, 10).items);
  }
  // The same holds when the metric itself is rescaled.
  Model model = random_model(6, 12, 3, rng);
  const RatingDataset train = testing::random_dataset(6, 12, 0.3, rng);
  Model scaled_model = model;
  for (MetricKind k : kMetricKinds) scaled_model.metrics[k] *= 4.0;
  for (int u = 0; u < 6; ++u) {
    const auto a = recommend_topk(model, train, u, 12, RecommenderMode::ibcf);
    const auto b = recommend_topk(scaled_model, train, u, 12, RecommenderMode::ibcf);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      EXPECT_EQ(a->items, b->items);
    }
  }
}

TEST(Metrics, HitRatioAndRecallExamples) {
  RankingResult all_first;
  for (int u = 0; u < 5; ++u) all_first.rows.push_back(row({u, 10 + u, 20 + u}, {u}));
  for (int k = 1; k <= 3; ++k) {
    EXPECT_EQ(hit_ratio_at_k(all_first, k), 1.0);
    EXPECT_EQ(recall_at_k(all_first, k), 1.0);
  }
  std::vector<int> ranked(50);
  std::iota(ranked.begin(), ranked.end(), 0);
  RankingResult half;
  half.rows.push_back(row(ranked, {5, 40, 60, 70}));
  EXPECT_DOUBLE_EQ(recall_at_k(half, 50), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(half, 10), 0.25);
  EXPECT_DOUBLE_EQ(hit_ratio_at_k(half, 5), 0.0);
  EXPECT_DOUBLE_EQ(hit_ratio_at_k(half, 6), 1.0);
  EXPECT_THROW(hit_ratio_at_k(RankingResult{}, 10), ValidationError);
  EXPECT_THROW(recall_at_k(RankingResult{}, 10), ValidationError);
}

TEST(Metrics, NonDecreasingInK) {
  Rng rng(11);
  const Model model = random_model(30, 40, 4, rng);
  const auto split = split_dataset(testing::random_dataset(30, 40, 0.2, rng), {}, 1);
  for (auto mode : {RecommenderMode::ubcf, RecommenderMode::ibcf}) {
    const auto result = evaluate_rankings(model, split.train, split.test, 40, mode);
    ASSERT_FALSE(result.rows.empty());
    for (int k = 1; k < 40; ++k) {
      EXPECT_LE(hit_ratio_at_k(result, k), hit_ratio_at_k(result, k + 1));
      EXPECT_LE(recall_at_k(result, k), recall_at_k(result, k + 1));
    }
  }
}

TEST(Metrics, RandomRankingHitRatioMatchesClosedForm) {
  constexpr int n = 100, k = 10, trials = 20000;
  Rng rng(12);
  std::vector<int> items(n);
  std::iota(items.begin(), items.end(), 0);
  RankingResult result;
  for (int t = 0; t < trials; ++t) {
    std::shuffle(items.begin(), items.end(), rng);
    result.rows.push_back(row(std::vector<int>(items.begin(), items.begin() + k), {0}, n));
  }
  const double expected = static_cast<double>(k) / n;
  const double sigma = std::sqrt(expected * (1 - expected) / trials);
  EXPECT_NEAR(hit_ratio_at_k(result, k), expected, 3 * sigma);
  EXPECT_NEAR(expected_random_hit_ratio(result, k), expected, 1e-12);
}

TEST(Metrics, ClosedFormRandomBaselineWithSeveralPositives) {
  // 1 - C(N-p, K) / C(N, K) with N=6, p=2, K=2: 1 - 6/15.
  RankingResult result;
  result.rows.push_back(row({0, 1}, {4, 5}, 6));
  EXPECT_NEAR(expected_random_hit_ratio(result, 2), 1.0 - 6.0 / 15.0, 1e-15);
  result.rows[0].ranked.num_candidates = 2;
  EXPECT_EQ(expected_random_hit_ratio(result, 2), 1.0);
}

TEST(Metrics, ColdUsersAreSkippedAndCounted) {
  Rng rng(13);
  const Model model = random_model(3, 4, 2, rng);
  const RatingDataset train(3, 4, {{0, 0, 5}, {1, 1, 5}});
  const RatingDataset test(3, 4, {{0, 2, 5}, {2, 3, 5}});
  const auto result = evaluate_rankings(model, train, test, 10, RecommenderMode::ubcf);
  EXPECT_EQ(result.rows.size(), 1u);
  EXPECT_EQ(result.skipped_cold, 1);
  const RatingDataset none(3, 4, {{2, 3, 5}});
  EXPECT_THROW(hit_ratio_at_k(evaluate_rankings(model, train, none, 10, RecommenderMode::ibcf), 10),
               ValidationError);
}

TEST(Results, RowFormatAndSummary) {
  std::ostringstream out;
  write_result_rows(out, {{"hr", 10, 0.5, 20, "1", std::nullopt}, {"nmi", 20, 0.25, 150, "1;2", 0.125}});
  EXPECT_EQ(out.str(), "metric,K,value,n_users_evaluated,seed,std\nhr,10,0.5,20,1,\nnmi,20,0.25,150,1;2,0.125\n");
  const auto [mean, sd] = mean_and_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(mean, 2.5);
  EXPECT_NEAR(sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(parse_mode("ibcf"), RecommenderMode::ibcf);
  EXPECT_THROW(parse_mode("svd"), ValidationError);
}

}  // namespace
}  // namespace mml
