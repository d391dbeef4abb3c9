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

// Seeded synthetic rating matrices with planted item categories.

#pragma once

#include "mml/dataset.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mml {

struct PlantedConfig {
  int num_users = 200;
  int num_items = 150;
  int num_categories = 5;
  /// Interaction probability for items in the user's home category.
  double p_within = 0.3;
  double p_cross = 0.01;
  /// Share of interactions recorded with a below-threshold rating (1 or 2).
  double low_rating_fraction = 0.0;
};

struct SyntheticData {
  RatingDataset ratings;
  std::vector<int> item_labels;
  std::vector<int> user_home;
};

/// Item i belongs to category i % C and user u's home category is u % C.
/// Positive ratings are uniform on {3, 4, 5}. Tokens are "u<id>" and "i<id>".
inline SyntheticData planted_clusters(const PlantedConfig& config, std::uint64_t seed) {
  if (config.num_users < 1 || config.num_items < 1 || config.num_categories < 1)
    throw ValidationError("planted generator needs positive sizes");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> high(3, 5), low(1, 2);
  auto index = std::make_shared<EntityIndex>();
  for (int u = 0; u < config.num_users; ++u) index->intern(EntityKind::user, "u" + std::to_string(u));
  for (int i = 0; i < config.num_items; ++i) index->intern(EntityKind::item, "i" + std::to_string(i));

  SyntheticData out;
  out.item_labels.resize(config.num_items);
  for (int i = 0; i < config.num_items; ++i) out.item_labels[i] = i % config.num_categories;
  out.user_home.resize(config.num_users);
  std::vector<Rating> ratings;
  for (int u = 0; u < config.num_users; ++u) {
    out.user_home[u] = u % config.num_categories;
    for (int i = 0; i < config.num_items; ++i) {
      const double p = out.item_labels[i] == out.user_home[u] ? config.p_within : config.p_cross;
      if (unit(rng) >= p) continue;
      const bool negative = unit(rng) < config.low_rating_fraction;
      ratings.push_back({u, i, static_cast<double>(negative ? low(rng) : high(rng))});
    }
  }
  out.ratings = RatingDataset(config.num_users, config.num_items, std::move(ratings), kDefaultPositivityThreshold,
                              std::move(index));
  return out;
}

/// The bundled 20x20 toy set: two blocks of 10 users and 10 items, 60% dense
/// within a block, with one low rating per user and sparse cross-block noise.
inline SyntheticData toy_fixture(std::uint64_t seed = 7) {
  constexpr int kSize = 20, kBlock = 10;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> high(3, 5), low(1, 2), pick(0, kSize - 1);
  auto index = std::make_shared<EntityIndex>();
  for (int u = 0; u < kSize; ++u) index->intern(EntityKind::user, "u" + std::to_string(u));
  for (int i = 0; i < kSize; ++i) index->intern(EntityKind::item, "i" + std::to_string(i));

  SyntheticData out;
  std::vector<Rating> ratings;
  for (int u = 0; u < kSize; ++u) {
    out.user_home.push_back(u / kBlock);
    for (int i = 0; i < kSize; ++i) {
      const bool same = u / kBlock == i / kBlock;
      if (unit(rng) < (same ? 0.6 : 0.05)) ratings.push_back({u, i, static_cast<double>(high(rng))});
    }
    ratings.push_back({u, pick(rng), static_cast<double>(low(rng))});  // may override a positive
  }
  for (int i = 0; i < kSize; ++i) out.item_labels.push_back(i / kBlock);
  out.ratings = RatingDataset(kSize, kSize, std::move(ratings), kDefaultPositivityThreshold, std::move(index));
  return out;
}

/// Writes `item_token<delim>label` rows.
inline void export_item_labels(const SyntheticData& data, const std::string& path, RatingFormat format) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  const char delim = delimiter_of(format);
  const auto* index = data.ratings.index();
  for (std::size_t i = 0; i < data.item_labels.size(); ++i) {
    const int id = static_cast<int>(i);
    out << (index ? index->token(EntityKind::item, id) : "i" + std::to_string(id)) << delim << data.item_labels[i]
        << '\n';
  }
}

}  // namespace mml
