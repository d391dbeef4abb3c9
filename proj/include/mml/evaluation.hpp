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

#pragma once

#include "mml/dataset.hpp"
#include "mml/metric.hpp"
#include "mml/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace mml {

// ---------------------------------------------------------------------------
// Clustering quality

struct ClusterAssignment {
  std::vector<int> labels;    // ground-truth category per item
  std::vector<int> clusters;  // assigned cluster per item, in [0, K)
  int K = 0;
};

struct KMeansResult {
  std::vector<int> clusters;
  RowMatrix centroids;  // unit rows
  std::vector<double> objective_history;  // sum of cosine distances, one entry per iteration
  int iterations = 0;
};

/// Cosine k-means on L2-normalized rows with seeded k-means++ initialization.
///
/// Zero rows are nudged onto a coordinate axis before normalizing. Iterates
/// to an assignment fixpoint or `max_iter`; a cluster left empty is reseeded
/// with the point farthest from its centroid.
inline KMeansResult spherical_kmeans(const RowMatrix& vectors, int K, std::uint64_t seed, int max_iter = 100) {
  if (K < 2) throw ValidationError("spherical k-means needs K >= 2");
  const auto count = vectors.rows();
  const auto dim = vectors.cols();
  if (dim == 0) throw ValidationError("spherical k-means needs non-empty vectors");
  RowMatrix x = vectors;
  for (Eigen::Index r = 0; r < count; ++r) {
    if (x.row(r).squaredNorm() == 0.0) x(r, r % dim) = 1e-12;
    x.row(r).normalize();
  }
  {
    std::vector<std::vector<double>> rows(count);
    for (Eigen::Index r = 0; r < count; ++r) rows[r].assign(x.row(r).data(), x.row(r).data() + dim);
    std::sort(rows.begin(), rows.end());
    const auto distinct = std::unique(rows.begin(), rows.end()) - rows.begin();
    if (distinct < K)
      throw ValidationError("only " + std::to_string(distinct) + " distinct vectors for K = " + std::to_string(K));
  }

  Rng rng(seed);
  KMeansResult result;
  RowMatrix centroids(K, dim);
  // k-means++ seeding on cosine distance.
  {
    std::uniform_int_distribution<Eigen::Index> first(0, count - 1);
    centroids.row(0) = x.row(first(rng));
    Vector best_cos = x * centroids.row(0).transpose();
    for (int c = 1; c < K; ++c) {
      Vector weight = (1.0 - best_cos.array()).cwiseMax(0.0).square();
      const double total = weight.sum();
      Eigen::Index chosen = 0;
      if (total > 0.0) {
        double target = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (chosen = 0; chosen < count - 1; ++chosen) {
          target -= weight[chosen];
          if (target < 0.0) break;
        }
        while (weight[chosen] == 0.0 && chosen > 0) --chosen;  // never pick an existing center
      }
      centroids.row(c) = x.row(chosen);
      best_cos = best_cos.cwiseMax(x * centroids.row(c).transpose());
    }
  }

  std::vector<int> assign(count, -1), previous;
  for (int iter = 0; iter < max_iter; ++iter) {
    const RowMatrix sims = x * centroids.transpose();
    for (Eigen::Index r = 0; r < count; ++r) {
      Eigen::Index best;
      sims.row(r).maxCoeff(&best);
      assign[r] = static_cast<int>(best);
    }
    std::vector<int> sizes(K, 0);
    for (int a : assign) ++sizes[a];
    for (int c = 0; c < K; ++c) {
      if (sizes[c] > 0) continue;
      Eigen::Index farthest = -1;
      double worst = -1.0;
      for (Eigen::Index r = 0; r < count; ++r) {
        if (sizes[assign[r]] < 2) continue;
        const double dist = 1.0 - x.row(r).dot(centroids.row(assign[r]));
        if (dist > worst) {
          worst = dist;
          farthest = r;
        }
      }
      if (farthest < 0) break;
      --sizes[assign[farthest]];
      assign[farthest] = c;
      sizes[c] = 1;
      centroids.row(c) = x.row(farthest);
    }
    double objective = 0.0;
    for (Eigen::Index r = 0; r < count; ++r) objective += 1.0 - x.row(r).dot(centroids.row(assign[r]));
    result.objective_history.push_back(objective);
    result.iterations = iter + 1;
    if (assign == previous) break;
    previous = assign;

    RowMatrix sums = RowMatrix::Zero(K, dim);
    for (Eigen::Index r = 0; r < count; ++r) sums.row(assign[r]) += x.row(r);
    for (int c = 0; c < K; ++c) {
      const double norm = sums.row(c).norm();
      if (norm > 0.0) centroids.row(c) = sums.row(c) / norm;
    }
  }
  result.clusters = std::move(assign);
  result.centroids = std::move(centroids);
  return result;
}

enum class EmbeddingSpace { metric, raw };

/// Item rows as clustered for NMI. In the metric space each row x becomes
/// W^I^{1/2} x, so Euclidean geometry there equals the learned item metric.
inline RowMatrix item_vectors(const Model& model, EmbeddingSpace space = EmbeddingSpace::metric) {
  const auto& e = model.embeddings;
  RowMatrix items = e.vectors.bottomRows(e.num_items);
  if (space == EmbeddingSpace::raw) return items;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(project_psd(model.metrics.w_item));
  if (solver.info() != Eigen::Success) throw NumericalError("item metric eigendecomposition failed");
  const Vector roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix root = solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
  return items * root;
}

/// (label, cluster) -> count.
inline std::map<std::pair<int, int>, int> contingency_table(const ClusterAssignment& a) {
  if (a.labels.size() != a.clusters.size()) throw ValidationError("labels and clusters differ in length");
  std::map<std::pair<int, int>, int> table;
  for (std::size_t i = 0; i < a.labels.size(); ++i) ++table[{a.labels[i], a.clusters[i]}];
  return table;
}

/// NMI = I(L;C) / ((H(L) + H(C)) / 2), natural log, 0 log 0 = 0.
/// Degenerate inputs (a single label and a single cluster, or no items) give 0.
inline double nmi(const ClusterAssignment& a) {
  const auto table = contingency_table(a);
  const double total = static_cast<double>(a.labels.size());
  if (total == 0) return 0.0;
  std::map<int, double> p_label, p_cluster;
  for (const auto& [key, count] : table) {
    p_label[key.first] += count / total;
    p_cluster[key.second] += count / total;
  }
  auto entropy = [](const std::map<int, double>& p) {
    double h = 0.0;
    for (const auto& [_, v] : p)
      if (v > 0) h -= v * std::log(v);
    return h;
  };
  const double h_sum = entropy(p_label) + entropy(p_cluster);
  if (h_sum <= 0.0) return 0.0;
  double mutual = 0.0;
  for (const auto& [key, count] : table) {
    const double p = count / total;
    mutual += p * std::log(p / (p_label[key.first] * p_cluster[key.second]));
  }
  return std::clamp(mutual / (h_sum / 2.0), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Top-k recommendation

enum class RecommenderMode { ubcf, ibcf };

inline const char* to_string(RecommenderMode mode) { return mode == RecommenderMode::ubcf ? "ubcf" : "ibcf"; }

inline RecommenderMode parse_mode(std::string_view name) {
  if (name == "ubcf") return RecommenderMode::ubcf;
  if (name == "ibcf") return RecommenderMode::ibcf;
  throw ValidationError("unknown recommender mode '" + std::string(name) + "'");
}

struct RankedList {
  int user = 0;
  std::vector<int> items;
  std::vector<double> scores;
  int num_candidates = 0;
};

/// Ranks items by descending score (ties by id), skipping `excluded` (sorted),
/// keeping at most `k`.
inline RankedList rank_candidates(const std::vector<double>& scores, std::span<const int> excluded, int k) {
  std::vector<int> candidates;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) candidates.push_back(i);
  RankedList list;
  list.num_candidates = static_cast<int>(candidates.size());
  const auto keep = std::min<std::size_t>(std::max(k, 0), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(), [&](int a, int b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  candidates.resize(keep);
  list.items = std::move(candidates);
  for (int i : list.items) list.scores.push_back(scores[i]);
  return list;
}

/// Item scores for one user under the learned metric.
///
/// ubcf: the k_nn users nearest under W^U vote for their positives with
/// weight 1 / (1 + distance). ibcf: minus the mean W^I distance from the
/// item to the user's positives.
inline std::vector<double> score_items(const Model& model, const RatingDataset& train, int user,
                                       RecommenderMode mode, int k_nn = 20) {
  const auto& e = model.embeddings;
  const int m = train.num_users(), n = train.num_items();
  std::vector<double> scores(n, 0.0);
  if (mode == RecommenderMode::ubcf) {
    std::vector<std::pair<double, int>> neighbors;
    neighbors.reserve(m);
    for (int v = 0; v < m; ++v)
      if (v != user) neighbors.emplace_back(w_distance(e.user(user), e.user(v), model.metrics.w_user), v);
    const auto keep = std::min<std::size_t>(std::max(k_nn, 0), neighbors.size());
    std::partial_sort(neighbors.begin(), neighbors.begin() + keep, neighbors.end());
    for (std::size_t j = 0; j < keep; ++j) {
      const auto [dist, v] = neighbors[j];
      for (int i : train.items_of(v)) scores[i] += 1.0 / (1.0 + dist);
    }
  } else {
    const auto positives = train.items_of(user);
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int j : positives) sum += w_distance(e.item(i), e.item(j), model.metrics.w_item);
      scores[i] = positives.empty() ? 0.0 : -sum / static_cast<double>(positives.size());
    }
  }
  return scores;
}

/// Top-k list over items outside the user's training positives; nullopt for
/// cold users (no training positive).
inline std::optional<RankedList> recommend_topk(const Model& model, const RatingDataset& train, int user, int k_rec,
                                                RecommenderMode mode, int k_nn = 20) {
  if (train.items_of(user).empty()) return std::nullopt;
  auto list = rank_candidates(score_items(model, train, user, mode, k_nn), train.items_of(user), k_rec);
  list.user = user;
  return list;
}

struct RankingRow {
  RankedList ranked;
  std::vector<int> relevant;  // sorted test positives
};

struct RankingResult {
  std::vector<RankingRow> rows;
  int skipped_cold = 0;
};

/// Ranks every user that has a test positive; cold users are skipped and counted.
inline RankingResult evaluate_rankings(const Model& model, const RatingDataset& train, const RatingDataset& test,
                                       int k_max, RecommenderMode mode, int k_nn = 20) {
  RankingResult result;
  for (int u = 0; u < test.num_users(); ++u) {
    const auto relevant = test.items_of(u);
    if (relevant.empty()) continue;
    auto list = recommend_topk(model, train, u, k_max, mode, k_nn);
    if (!list) {
      ++result.skipped_cold;
      continue;
    }
    result.rows.push_back({std::move(*list), std::vector<int>(relevant.begin(), relevant.end())});
  }
  return result;
}

namespace detail {
inline int hits_at(const RankingRow& row, int k) {
  int hits = 0;
  const auto limit = std::min<std::size_t>(std::max(k, 0), row.ranked.items.size());
  for (std::size_t j = 0; j < limit; ++j)
    hits += std::binary_search(row.relevant.begin(), row.relevant.end(), row.ranked.items[j]);
  return hits;
}

inline void require_rows(const RankingResult& r) {
  if (r.rows.empty()) throw ValidationError("no evaluable users");
}
}  // namespace detail

/// Fraction of users with at least one relevant item in their top K.
inline double hit_ratio_at_k(const RankingResult& result, int k) {
  detail::require_rows(result);
  double hits = 0.0;
  for (const auto& row : result.rows) hits += detail::hits_at(row, k) > 0;
  return hits / static_cast<double>(result.rows.size());
}

/// Mean over users of |top-K intersect relevant| / |relevant|.
inline double recall_at_k(const RankingResult& result, int k) {
  detail::require_rows(result);
  double sum = 0.0;
  for (const auto& row : result.rows)
    sum += static_cast<double>(detail::hits_at(row, k)) / static_cast<double>(row.relevant.size());
  return sum / static_cast<double>(result.rows.size());
}

/// Closed-form E[HR@K] of a uniformly random ranking of each user's
/// candidates: 1 - C(N - p, K) / C(N, K), averaged over users.
inline double expected_random_hit_ratio(const RankingResult& result, int k) {
  detail::require_rows(result);
  double sum = 0.0;
  for (const auto& row : result.rows) {
    const int n = row.ranked.num_candidates;
    const int p = static_cast<int>(row.relevant.size());
    double miss = 1.0;
    for (int j = 0; j < std::min(k, n); ++j) miss *= std::max(0.0, static_cast<double>(n - p - j) / (n - j));
    sum += 1.0 - miss;
  }
  return sum / static_cast<double>(result.rows.size());
}

// ---------------------------------------------------------------------------
// Result rows: metric,K,value,n_users_evaluated,seed[,std]

struct ResultRow {
  std::string metric;
  int k = 0;
  double value = 0.0;
  int n_evaluated = 0;
  std::string seed;
  std::optional<double> std_dev;
};

inline void write_result_rows(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "metric,K,value,n_users_evaluated,seed,std\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.metric << ',' << r.k << ',' << r.value << ',' << r.n_evaluated << ',' << r.seed << ',';
    if (r.std_dev) out << *r.std_dev;
    out << '\n';
  }
}

inline std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0};
}

}  // namespace mml
