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
#include "mml/model.hpp"

#include <algorithm>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace mml {

struct SimilarPair {
  int a = 0;  // a < b
  int b = 0;
  double jaccard = 0.0;
};

/// S^U and S^I: same-kind entity pairs whose positive interaction lists have
/// Jaccard similarity strictly above theta. Immutable after construction.
class SimilarPairSets {
 public:
  SimilarPairSets() = default;
  SimilarPairSets(double theta, int num_users, int num_items, std::vector<SimilarPair> user_pairs,
                  std::vector<SimilarPair> item_pairs)
      : theta_(theta), user_pairs_(std::move(user_pairs)), item_pairs_(std::move(item_pairs)) {
    user_partners_ = adjacency(num_users, user_pairs_);
    item_partners_ = adjacency(num_items, item_pairs_);
  }

  double theta() const { return theta_; }
  const std::vector<SimilarPair>& pairs(EntityKind kind) const {
    return kind == EntityKind::user ? user_pairs_ : item_pairs_;
  }
  int num_entities(EntityKind kind) const {
    return static_cast<int>(kind == EntityKind::user ? user_partners_.size() : item_partners_.size());
  }
  /// Sorted partners of `id` within its own kind.
  std::span<const int> partners(EntityKind kind, int id) const {
    return kind == EntityKind::user ? user_partners_.at(id) : item_partners_.at(id);
  }
  bool contains(EntityKind kind, int a, int b) const {
    auto p = partners(kind, a);
    return std::binary_search(p.begin(), p.end(), b);
  }

 private:
  static std::vector<std::vector<int>> adjacency(int count, const std::vector<SimilarPair>& pairs) {
    std::vector<std::vector<int>> adj(count);
    for (const auto& p : pairs) {
      adj[p.a].push_back(p.b);
      adj[p.b].push_back(p.a);
    }
    for (auto& v : adj) std::sort(v.begin(), v.end());
    return adj;
  }

  double theta_ = 0.0;
  std::vector<SimilarPair> user_pairs_, item_pairs_;
  std::vector<std::vector<int>> user_partners_, item_partners_;
};

namespace detail {

// Only pairs sharing at least one counterpart can clear a positive threshold,
// so candidates come from the inverted lists.
inline std::vector<SimilarPair> jaccard_pairs(const RatingDataset& train, EntityKind kind, double theta) {
  const EntityKind other = kind == EntityKind::user ? EntityKind::item : EntityKind::user;
  const int count = train.count(kind);
  std::vector<SimilarPair> out;
  std::vector<int> overlap(count, 0);
  std::vector<int> touched;
  for (int a = 0; a < count; ++a) {
    const auto list_a = train.list(kind, a);
    for (int x : list_a)
      for (int b : train.list(other, x)) {
        if (b <= a) continue;
        if (overlap[b]++ == 0) touched.push_back(b);
      }
    std::sort(touched.begin(), touched.end());
    for (int b : touched) {
      const auto inter = static_cast<double>(overlap[b]);
      const auto uni = static_cast<double>(list_a.size() + train.list(kind, b).size()) - inter;
      const double j = inter / uni;
      if (j > theta) out.push_back({a, b, j});
      overlap[b] = 0;
    }
    touched.clear();
  }
  return out;
}

/// Uniform draw from [0, count) excluding `excluded(x)`; `eligible` must be > 0.
template <class Excluded>
int draw_excluding(int count, int eligible, Rng& rng, Excluded&& excluded) {
  constexpr int kMaxRejections = 32;
  std::uniform_int_distribution<int> pick(0, count - 1);
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    int x = pick(rng);
    if (!excluded(x)) return x;
  }
  // Dense rows: sample the eligible set directly.
  std::uniform_int_distribution<int> nth(0, eligible - 1);
  int target = nth(rng);
  for (int x = 0; x < count; ++x)
    if (!excluded(x) && target-- == 0) return x;
  return -1;  // unreachable when eligible is exact
}

}  // namespace detail

inline SimilarPairSets build_similar_pair_sets(const RatingDataset& train, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("theta must lie in (0,1)");
  return SimilarPairSets(theta, train.num_users(), train.num_items(),
                         detail::jaccard_pairs(train, EntityKind::user, theta),
                         detail::jaccard_pairs(train, EntityKind::item, theta));
}

/// Audit dump: `kind,id_a,id_b,jaccard` rows.
inline void write_similar_pairs(std::ostream& out, const SimilarPairSets& sets) {
  out << "kind,id_a,id_b,jaccard\n" << std::setprecision(17);
  for (EntityKind kind : {EntityKind::user, EntityKind::item})
    for (const auto& p : sets.pairs(kind)) out << to_string(kind) << ',' << p.a << ',' << p.b << ',' << p.jaccard << '\n';
}

/// N positive pairs drawn uniformly with replacement.
inline std::vector<UserItem> sample_positive_batch(const RatingDataset& train, int batch_size, Rng& rng) {
  const auto& positives = train.positive_pairs();
  if (positives.empty()) throw EmptyDatasetError("training split has no positive pairs");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  std::uniform_int_distribution<std::size_t> pick(0, positives.size() - 1);
  std::vector<UserItem> batch(batch_size);
  for (auto& p : batch) p = positives[pick(rng)];
  return batch;
}

/// Dual triplets <a,b,c> and <c,d,a>: r_ac != 0, r_bc = 0, r_ad = 0.
///
/// The candidate lists keep the draw order; the rank weight is estimated
/// from them. weight_user / weight_item default to 1 until a weighting is applied.
struct DualTriplet {
  int a = 0;  // anchor user
  int b = 0;  // contrast user
  int c = 0;  // anchor item
  int d = 0;  // contrast item
  std::vector<int> user_candidates{};
  std::vector<int> item_candidates{};
  double weight_user = 1.0;
  double weight_item = 1.0;
};

/// Latent triplet <a, f, g> within one kind: (a,f) in S, (a,g) not in S.
struct LatentTriplet {
  EntityKind kind = EntityKind::user;
  int a = 0;
  int f = 0;
  int g = 0;
  std::vector<int> dissimilar_candidates{};
  double weight = 1.0;
};

namespace detail {

// Draws the negative candidates for one side of a dual triplet. When the
// pool is no larger than J the whole pool is scanned in id order.
template <class Excluded>
std::vector<int> draw_negatives(int count, int eligible, int num_candidates, Rng& rng, Excluded&& excluded) {
  std::vector<int> out;
  if (num_candidates >= eligible) {
    for (int x = 0; x < count; ++x)
      if (!excluded(x)) out.push_back(x);
    return out;
  }
  out.reserve(num_candidates);
  for (int j = 0; j < num_candidates; ++j) out.push_back(draw_excluding(count, eligible, rng, excluded));
  return out;
}

}  // namespace detail

/// Sets b and d to the candidates farthest from the target under F^UI
/// (first maximum in candidate order wins).
inline void choose_contrasts(DualTriplet& t, const Model& model, Variant variant = Variant::mml) {
  const auto& e = model.embeddings;
  auto farthest = [&](const std::vector<int>& candidates, auto&& distance) {
    int best = candidates.front();
    double best_distance = distance(best);
    for (std::size_t j = 1; j < candidates.size(); ++j) {
      double dist = distance(candidates[j]);
      if (dist > best_distance) {
        best = candidates[j];
        best_distance = dist;
      }
    }
    return best;
  };
  t.b = farthest(t.user_candidates, [&](int b) {
    return relation_distance(model, variant, MetricKind::user_item, e.user_entity(b), e.item_entity(t.c));
  });
  t.d = farthest(t.item_candidates, [&](int d) {
    return relation_distance(model, variant, MetricKind::user_item, e.user_entity(t.a), e.item_entity(d));
  });
}

/// Samples the contrast user b (r_bc = 0) and contrast item d (r_ad = 0), each
/// the candidate farthest from the target under F^UI among J draws.
/// Returns nullopt when either side has no negative at all.
inline std::optional<DualTriplet> sample_dual_triplet(UserItem pair, const RatingDataset& train, const Model& model,
                                                      int num_candidates, Rng& rng,
                                                      Variant variant = Variant::mml) {
  if (num_candidates < 1) throw ValidationError("candidate count must be at least 1");
  const int m = train.num_users(), n = train.num_items();
  const int a = pair.user, c = pair.item;
  const auto raters_of_c = train.users_of(c);
  const auto items_of_a = train.items_of(a);
  const int users_eligible = m - static_cast<int>(raters_of_c.size());
  const int items_eligible = n - static_cast<int>(items_of_a.size());
  if (users_eligible <= 0 || items_eligible <= 0) return std::nullopt;

  DualTriplet t;
  t.a = a;
  t.c = c;
  t.user_candidates = detail::draw_negatives(m, users_eligible, num_candidates, rng, [&](int b) {
    return std::binary_search(raters_of_c.begin(), raters_of_c.end(), b);
  });
  t.item_candidates = detail::draw_negatives(n, items_eligible, num_candidates, rng, [&](int d) {
    return std::binary_search(items_of_a.begin(), items_of_a.end(), d);
  });
  choose_contrasts(t, model, variant);
  return t;
}

/// f uniform among the anchor's partners; g (and any extra candidates) uniform
/// among same-kind entities that are neither the anchor nor its partners.
/// Returns nullopt when the anchor has no partner or no eligible g exists.
inline std::optional<LatentTriplet> sample_latent_triplet(int anchor, const SimilarPairSets& sets, EntityKind kind,
                                                          Rng& rng, int num_candidates = 1) {
  if (num_candidates < 1) throw ValidationError("candidate count must be at least 1");
  const int count = sets.num_entities(kind);
  if (anchor < 0 || anchor >= count) throw ValidationError("latent anchor out of range");
  const auto partners = sets.partners(kind, anchor);
  if (partners.empty()) return std::nullopt;
  const int eligible = count - 1 - static_cast<int>(partners.size());
  if (eligible <= 0) return std::nullopt;

  LatentTriplet t;
  t.kind = kind;
  t.a = anchor;
  std::uniform_int_distribution<std::size_t> pick(0, partners.size() - 1);
  t.f = partners[pick(rng)];
  auto excluded = [&](int x) { return x == anchor || std::binary_search(partners.begin(), partners.end(), x); };
  t.dissimilar_candidates.reserve(num_candidates);
  for (int j = 0; j < num_candidates; ++j)
    t.dissimilar_candidates.push_back(detail::draw_excluding(count, eligible, rng, excluded));
  t.g = t.dissimilar_candidates.front();
  return t;
}

}  // namespace mml
