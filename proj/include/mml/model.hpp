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
#include "mml/metric.hpp"

#include <array>
#include <string>
#include <string_view>

namespace mml {

inline constexpr double kDefaultMargin = 0.02;
inline constexpr double kMarginFloor = 1e-3;
inline constexpr double kMarginCeiling = 1.0;

/// Adaptive margins: mr^u per user, mr^i per item, mr^l per entity (users then items).
struct MarginSet {
  Vector user;
  Vector item;
  Vector latent;

  static MarginSet constant(int num_users, int num_items, double value = kDefaultMargin) {
    return {Vector::Constant(num_users, value), Vector::Constant(num_items, value),
            Vector::Constant(num_users + num_items, value)};
  }
};

/// Full model minus optimizer state.
struct Model {
  EmbeddingTable embeddings;
  MetricSet metrics;
  MarginSet margins;
};

/// Training variants: the full objective and the five component ablations.
enum class Variant { mml, euc_mml, w_mml, m_mml, np_mml, nr_mml };

inline constexpr std::array<Variant, 6> kAllVariants = {Variant::mml,   Variant::euc_mml, Variant::w_mml,
                                                        Variant::m_mml, Variant::np_mml,  Variant::nr_mml};

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::mml: return "mml";
    case Variant::euc_mml: return "euc-mml";
    case Variant::w_mml: return "w-mml";
    case Variant::m_mml: return "m-mml";
    case Variant::np_mml: return "np-mml";
    case Variant::nr_mml: return "nr-mml";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (name == to_string(v)) return v;
  throw ValidationError("unknown variant '" + std::string(name) + "'");
}

/// Euclidean geometry with frozen identity metrics.
inline bool metrics_frozen(Variant v) { return v == Variant::euc_mml; }
/// One W shared by the user, item and user-item relations.
inline bool metrics_tied(Variant v) { return v == Variant::w_mml; }
inline bool margins_frozen(Variant v) { return v == Variant::m_mml; }

enum class RankWeighting { warp, constant };

inline RankWeighting parse_rank_weighting(std::string_view name) {
  if (name == "warp") return RankWeighting::warp;
  if (name == "constant") return RankWeighting::constant;
  throw ValidationError("unknown rank weighting '" + std::string(name) + "'");
}

inline const char* to_string(RankWeighting w) { return w == RankWeighting::warp ? "warp" : "constant"; }

struct Hyperparams {
  double alpha = 0.7;
  double lambda = 0.5;
  double theta = 0.3;
  double omega_p = 0.03;
  double omega_r = 0.03;
  double learning_rate = 0.02;
  int dim = 32;
  int batch_size = 512;
  Variant variant = Variant::mml;
  /// Square the Frobenius norm in the covariance penalty (the literal form is the default).
  bool covariance_penalty_squared = false;

  void validate() const {
    auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
    if (!open_unit(alpha)) throw ValidationError("alpha must lie in (0,1)");
    if (!open_unit(lambda)) throw ValidationError("lambda must lie in (0,1)");
    if (!open_unit(theta)) throw ValidationError("theta must lie in (0,1)");
    if (omega_p < 0 || omega_r < 0) throw ValidationError("omega weights must be non-negative");
    if (!(learning_rate > 0)) throw ValidationError("learning rate must be positive");
    if (dim <= 0) throw ValidationError("dimension must be positive");
    if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  }

  /// Regularizer weights after the NP/NR ablations are applied.
  double effective_omega_p() const { return variant == Variant::np_mml ? 0.0 : omega_p; }
  double effective_omega_r() const { return variant == Variant::nr_mml ? 0.0 : omega_r; }
};

/// F for one relation under the variant's geometry: the squared W-distance,
/// or the squared Euclidean distance when metrics are frozen.
inline double relation_distance(const Model& model, Variant variant, MetricKind kind, int x, int y) {
  const auto& e = model.embeddings;
  if (metrics_frozen(variant)) return detail::difference(e.row(x), e.row(y)).squaredNorm();
  return detail::quad_form(e.row(x), e.row(y), model.metrics[kind]);
}

}  // namespace mml
