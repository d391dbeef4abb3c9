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

#include "mml/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mml {

inline constexpr double kDefaultPositivityThreshold = 3.0;
inline constexpr double kMinRating = 1.0;
inline constexpr double kMaxRating = 5.0;

struct Rating {
  int user = 0;
  int item = 0;
  double value = 0.0;
};

struct UserItem {
  int user = 0;
  int item = 0;
  auto operator<=>(const UserItem&) const = default;
};

enum class RatingFormat { tsv, csv };

inline char delimiter_of(RatingFormat format) { return format == RatingFormat::csv ? ',' : '\t'; }

inline RatingFormat parse_format(std::string_view name) {
  if (name == "tsv") return RatingFormat::tsv;
  if (name == "csv") return RatingFormat::csv;
  throw ValidationError("unknown rating format '" + std::string(name) + "' (expected tsv or csv)");
}

/// Bidirectional mapping between external tokens and dense ids, one space per kind.
class EntityIndex {
 public:
  int intern(EntityKind kind, const std::string& token) {
    auto& ids = ids_of(kind);
    auto [it, inserted] = ids.try_emplace(token, static_cast<int>(ids.size()));
    if (inserted) tokens_of(kind).push_back(token);
    return it->second;
  }

  std::optional<int> find(EntityKind kind, const std::string& token) const {
    const auto& ids = kind == EntityKind::user ? user_ids_ : item_ids_;
    auto it = ids.find(token);
    if (it == ids.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(EntityKind kind, int id) const {
    return kind == EntityKind::user ? user_tokens_.at(id) : item_tokens_.at(id);
  }

  int size(EntityKind kind) const {
    return static_cast<int>(kind == EntityKind::user ? user_tokens_.size() : item_tokens_.size());
  }

  bool operator==(const EntityIndex& other) const {
    return user_tokens_ == other.user_tokens_ && item_tokens_ == other.item_tokens_;
  }

 private:
  std::unordered_map<std::string, int>& ids_of(EntityKind kind) {
    return kind == EntityKind::user ? user_ids_ : item_ids_;
  }
  std::vector<std::string>& tokens_of(EntityKind kind) {
    return kind == EntityKind::user ? user_tokens_ : item_tokens_;
  }

  std::vector<std::string> user_tokens_, item_tokens_;
  std::unordered_map<std::string, int> user_ids_, item_ids_;
};

/// Sparse user-item rating matrix, binarized at a positivity threshold.
///
/// Ratings are kept sorted by (user, item) and unique. A pair is positive iff
/// its rating is at or above the threshold; unrated and low-rated pairs are
/// both negatives. Immutable after construction.
class RatingDataset {
 public:
  RatingDataset() = default;

  RatingDataset(int num_users, int num_items, std::vector<Rating> ratings,
                double threshold = kDefaultPositivityThreshold,
                std::shared_ptr<const EntityIndex> index = nullptr)
      : num_users_(num_users), num_items_(num_items), threshold_(threshold), index_(std::move(index)) {
    if (num_users < 0 || num_items < 0) throw ValidationError("negative entity count");
    for (const auto& r : ratings) {
      if (r.user < 0 || r.user >= num_users || r.item < 0 || r.item >= num_items)
        throw ValidationError("rating (" + std::to_string(r.user) + ", " + std::to_string(r.item) +
                              ") outside the " + std::to_string(num_users) + "x" +
                              std::to_string(num_items) + " matrix");
      if (!(r.value >= kMinRating && r.value <= kMaxRating))
        throw ValidationError("rating value " + std::to_string(r.value) + " outside [1,5]");
    }
    // Later records override earlier ones for the same pair.
    std::stable_sort(ratings.begin(), ratings.end(), [](const Rating& a, const Rating& b) {
      return std::tie(a.user, a.item) < std::tie(b.user, b.item);
    });
    for (std::size_t i = 0; i < ratings.size(); ++i) {
      if (i + 1 < ratings.size() && ratings[i + 1].user == ratings[i].user && ratings[i + 1].item == ratings[i].item)
        continue;
      ratings_.push_back(ratings[i]);
    }

    user_items_.assign(num_users, {});
    item_users_.assign(num_items, {});
    for (const auto& r : ratings_) {
      if (r.value < threshold_) continue;
      positives_.push_back({r.user, r.item});
      user_items_[r.user].push_back(r.item);
      item_users_[r.item].push_back(r.user);
    }
    // user_items_ is already sorted; item_users_ is filled in user order.
  }

  int num_users() const { return num_users_; }
  int num_items() const { return num_items_; }
  double threshold() const { return threshold_; }
  bool empty() const { return ratings_.empty(); }

  const std::vector<Rating>& ratings() const { return ratings_; }
  const std::vector<UserItem>& positive_pairs() const { return positives_; }

  /// list(u): sorted items user u rated positively.
  std::span<const int> items_of(int user) const { return user_items_.at(user); }
  /// list(i): sorted users who rated item i positively.
  std::span<const int> users_of(int item) const { return item_users_.at(item); }

  std::span<const int> list(EntityKind kind, int id) const {
    return kind == EntityKind::user ? items_of(id) : users_of(id);
  }

  int count(EntityKind kind) const { return kind == EntityKind::user ? num_users_ : num_items_; }

  bool is_positive(int user, int item) const {
    const auto& items = user_items_.at(user);
    return std::binary_search(items.begin(), items.end(), item);
  }

  const EntityIndex* index() const { return index_.get(); }
  std::shared_ptr<const EntityIndex> shared_index() const { return index_; }

 private:
  int num_users_ = 0;
  int num_items_ = 0;
  double threshold_ = kDefaultPositivityThreshold;
  std::shared_ptr<const EntityIndex> index_;
  std::vector<Rating> ratings_;
  std::vector<UserItem> positives_;
  std::vector<std::vector<int>> user_items_;
  std::vector<std::vector<int>> item_users_;
};

struct DatasetSplit {
  RatingDataset train;
  RatingDataset validation;
  RatingDataset test;
  std::uint64_t fold_seed = 0;
};

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

struct LoadOptions {
  double threshold = kDefaultPositivityThreshold;
  /// When set, tokens are resolved against this index and unknown tokens are errors.
  std::shared_ptr<const EntityIndex> fixed_index{};
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto begin = s.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(ws);
  return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline std::optional<double> parse_double(std::string_view s) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

template <class Fn>
void for_each_record(const std::string& path, char delim, std::size_t expected_fields, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, delim);
    if (fields.size() != expected_fields)
      throw ParseError(path, line_no,
                       "expected " + std::to_string(expected_fields) + " fields, found " + std::to_string(fields.size()));
    for (auto f : fields)
      if (f.empty()) throw ParseError(path, line_no, "empty field");
    fn(line_no, fields);
  }
}

}  // namespace detail

/// Reads `user<delim>item<delim>rating` records and densely re-indexes tokens
/// in order of first appearance.
inline RatingDataset load_ratings(const std::string& path, RatingFormat format, const LoadOptions& options = {}) {
  const char delim = delimiter_of(format);
  auto index = options.fixed_index ? std::make_shared<EntityIndex>(*options.fixed_index)
                                   : std::make_shared<EntityIndex>();
  std::vector<Rating> ratings;
  detail::for_each_record(path, delim, 3, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    auto value = detail::parse_double(f[2]);
    if (!value) throw ParseError(path, line_no, "rating '" + std::string(f[2]) + "' is not a number");
    if (!(*value >= kMinRating && *value <= kMaxRating))
      throw ValidationError(path + ":" + std::to_string(line_no) + ": rating " + std::string(f[2]) +
                            " outside [1,5]");
    std::string user_token(f[0]), item_token(f[1]);
    int user = 0, item = 0;
    if (options.fixed_index) {
      auto u = index->find(EntityKind::user, user_token);
      auto i = index->find(EntityKind::item, item_token);
      if (!u || !i)
        throw ValidationError(path + ":" + std::to_string(line_no) + ": token not present in the entity index");
      user = *u;
      item = *i;
    } else {
      user = index->intern(EntityKind::user, user_token);
      item = index->intern(EntityKind::item, item_token);
    }
    ratings.push_back({user, item, *value});
  });
  if (ratings.empty()) throw EmptyDatasetError("'" + path + "' contains no rating records");
  const int m = index->size(EntityKind::user);
  const int n = index->size(EntityKind::item);
  return RatingDataset(m, n, std::move(ratings), options.threshold, std::move(index));
}

inline std::string entity_index_path(const std::string& ratings_path) { return ratings_path + ".entity-index"; }

inline void save_entity_index(const EntityIndex& index, const std::string& path, RatingFormat format) {
  const char delim = delimiter_of(format);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (EntityKind kind : {EntityKind::user, EntityKind::item})
    for (int id = 0; id < index.size(kind); ++id)
      out << index.token(kind, id) << delim << id << delim << to_string(kind) << '\n';
}

inline std::shared_ptr<const EntityIndex> load_entity_index(const std::string& path, RatingFormat format) {
  auto index = std::make_shared<EntityIndex>();
  detail::for_each_record(path, delimiter_of(format), 3, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    EntityKind kind;
    if (f[2] == "user") kind = EntityKind::user;
    else if (f[2] == "item") kind = EntityKind::item;
    else throw ParseError(path, line_no, "kind must be user or item");
    auto id = detail::parse_double(f[1]);
    if (!id || *id != static_cast<double>(index->size(kind)))
      throw ParseError(path, line_no, "dense ids must be consecutive from 0");
    index->intern(kind, std::string(f[0]));
  });
  return index;
}

/// Writes the ratings in the input format plus the entity-index sidecar.
/// Datasets without an index get synthetic tokens "u<id>" / "i<id>".
inline void export_ratings(const RatingDataset& data, const std::string& path, RatingFormat format) {
  const char delim = delimiter_of(format);
  auto index = data.shared_index();
  if (!index) {
    auto synth = std::make_shared<EntityIndex>();
    for (int u = 0; u < data.num_users(); ++u) synth->intern(EntityKind::user, "u" + std::to_string(u));
    for (int i = 0; i < data.num_items(); ++i) synth->intern(EntityKind::item, "i" + std::to_string(i));
    index = synth;
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& r : data.ratings()) {
    const auto& ut = index->token(EntityKind::user, r.user);
    const auto& it = index->token(EntityKind::item, r.item);
    if (ut.find(delim) != std::string::npos || it.find(delim) != std::string::npos)
      throw ValidationError("token contains the delimiter and cannot be exported");
    out << ut << delim << it << delim << detail::format_double(r.value) << '\n';
  }
  save_entity_index(*index, entity_index_path(path), format);
}

/// Item category labels from `item_token<delim>label` lines. Items absent from
/// the file get -1. Label strings are densely numbered by first appearance.
inline std::vector<int> load_item_labels(const std::string& path, RatingFormat format, const EntityIndex& index) {
  std::vector<int> labels(index.size(EntityKind::item), -1);
  std::unordered_map<std::string, int> label_ids;
  detail::for_each_record(path, delimiter_of(format), 2, [&](std::size_t line_no, const std::vector<std::string_view>& f) {
    auto item = index.find(EntityKind::item, std::string(f[0]));
    if (!item) return;  // labels for items outside the dataset are ignored
    auto [it, inserted] = label_ids.try_emplace(std::string(f[1]), static_cast<int>(label_ids.size()));
    (void)line_no;
    labels[*item] = it->second;
  });
  return labels;
}

/// Seeded per-user stratified split of the positive pairs.
///
/// Users with at least 5 positives are split by the ratios (validation and
/// test sizes rounded, the rest to train, never leaving train empty); users
/// with fewer keep every positive in train. Negative ratings stay in train.
inline DatasetSplit split_dataset(const RatingDataset& data, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.validation + ratios.test;
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0) || std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("split ratios must be positive and sum to 1");

  constexpr std::size_t kMinStratified = 5;
  Rng rng(seed);
  std::vector<Rating> train, validation, test;
  std::vector<std::vector<Rating>> by_user(data.num_users());
  for (const auto& r : data.ratings()) {
    if (r.value >= data.threshold()) by_user[r.user].push_back(r);
    else train.push_back(r);
  }
  for (auto& positives : by_user) {
    const std::size_t c = positives.size();
    if (c < kMinStratified) {
      train.insert(train.end(), positives.begin(), positives.end());
      continue;
    }
    std::shuffle(positives.begin(), positives.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(ratios.validation * static_cast<double>(c)));
    auto n_test = static_cast<std::size_t>(std::llround(ratios.test * static_cast<double>(c)));
    while (n_val + n_test >= c) (n_val >= n_test ? n_val : n_test) -= 1;
    const std::size_t n_train = c - n_val - n_test;
    train.insert(train.end(), positives.begin(), positives.begin() + n_train);
    validation.insert(validation.end(), positives.begin() + n_train, positives.begin() + n_train + n_val);
    test.insert(test.end(), positives.begin() + n_train + n_val, positives.end());
  }
  const int m = data.num_users(), n = data.num_items();
  const double t = data.threshold();
  auto index = data.shared_index();
  return DatasetSplit{RatingDataset(m, n, std::move(train), t, index),
                      RatingDataset(m, n, std::move(validation), t, index),
                      RatingDataset(m, n, std::move(test), t, index), seed};
}

}  // namespace mml
