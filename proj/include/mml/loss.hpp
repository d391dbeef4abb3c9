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

#include "mml/model.hpp"
#include "mml/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace mml {

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

// Hinge arguments. Each F is relation_distance under the variant's geometry.

/// mr^u_a + F^UI(a,c) - F^U(a,b) - F^UI(b,c)
inline double explicit_user_argument(const Model& model, Variant variant, int a, int b, int c) {
  const auto& e = model.embeddings;
  const int ea = e.user_entity(a), eb = e.user_entity(b), ec = e.item_entity(c);
  return model.margins.user[a] + relation_distance(model, variant, MetricKind::user_item, ea, ec) -
         relation_distance(model, variant, MetricKind::user, ea, eb) -
         relation_distance(model, variant, MetricKind::user_item, eb, ec);
}

/// mr^i_c + F^UI(a,c) - F^I(c,d) - F^UI(a,d)
inline double explicit_item_argument(const Model& model, Variant variant, int a, int c, int d) {
  const auto& e = model.embeddings;
  const int ea = e.user_entity(a), ec = e.item_entity(c), ed = e.item_entity(d);
  return model.margins.item[c] + relation_distance(model, variant, MetricKind::user_item, ea, ec) -
         relation_distance(model, variant, MetricKind::item, ec, ed) -
         relation_distance(model, variant, MetricKind::user_item, ea, ed);
}

/// mr^l_a + F(a,f) - F(a,g), F = F^U or F^I by kind.
inline double latent_argument(const Model& model, Variant variant, EntityKind kind, int a, int f, int g) {
  const auto& e = model.embeddings;
  const MetricKind metric = same_kind_metric(kind);
  const int ea = e.entity(kind, a);
  return model.margins.latent[ea] + relation_distance(model, variant, metric, ea, e.entity(kind, f)) -
         relation_distance(model, variant, metric, ea, e.entity(kind, g));
}

inline double explicit_user_argument(const DualTriplet& t, const Model& model, Variant variant = Variant::mml) {
  return explicit_user_argument(model, variant, t.a, t.b, t.c);
}
inline double explicit_item_argument(const DualTriplet& t, const Model& model, Variant variant = Variant::mml) {
  return explicit_item_argument(model, variant, t.a, t.c, t.d);
}
inline double latent_argument(const LatentTriplet& t, const Model& model, Variant variant = Variant::mml) {
  return latent_argument(model, variant, t.kind, t.a, t.f, t.g);
}

// Rank weights.

/// WARP estimate log(floor(M / nu) + 1) where nu is the 1-based draw at which
/// the first violator appeared; nu = 0 (no violator) maps to nu = M.
inline double warp_weight(int first_violator, int pool) {
  if (pool < 1) throw ValidationError("rank weight pool must be non-empty");
  const int nu = first_violator <= 0 ? pool : std::min(first_violator, pool);
  return std::log(static_cast<double>(pool / nu) + 1.0);
}

enum class TripletSide { user, item };

namespace detail {
template <class Violates>
int first_violator(const std::vector<int>& candidates, Violates&& violates) {
  for (std::size_t j = 0; j < candidates.size(); ++j)
    if (violates(candidates[j])) return static_cast<int>(j) + 1;
  return 0;
}
}  // namespace detail

inline double rank_weight(const DualTriplet& t, TripletSide side, const Model& model, Variant variant = Variant::mml,
                          RankWeighting weighting = RankWeighting::warp) {
  if (weighting == RankWeighting::constant) return 1.0;
  if (side == TripletSide::user) {
    const int pool = static_cast<int>(t.user_candidates.size());
    if (pool == 0) return std::log(2.0);
    return warp_weight(detail::first_violator(t.user_candidates, [&](int b) {
                         return explicit_user_argument(model, variant, t.a, b, t.c) > 0.0;
                       }),
                       pool);
  }
  const int pool = static_cast<int>(t.item_candidates.size());
  if (pool == 0) return std::log(2.0);
  return warp_weight(detail::first_violator(t.item_candidates, [&](int d) {
                       return explicit_item_argument(model, variant, t.a, t.c, d) > 0.0;
                     }),
                     pool);
}

inline double rank_weight(const LatentTriplet& t, const Model& model, Variant variant = Variant::mml,
                          RankWeighting weighting = RankWeighting::warp) {
  if (weighting == RankWeighting::constant) return 1.0;
  const int pool = static_cast<int>(t.dissimilar_candidates.size());
  if (pool == 0) return std::log(2.0);
  return warp_weight(detail::first_violator(t.dissimilar_candidates, [&](int g) {
                       return latent_argument(model, variant, t.kind, t.a, t.f, g) > 0.0;
                     }),
                     pool);
}

/// WARP keeps the first violating dissimilar candidate as the trained
/// negative; without a violator g stays the first (uniform) draw.
inline void promote_first_violator(LatentTriplet& t, const Model& model, Variant variant = Variant::mml) {
  const int nu = detail::first_violator(t.dissimilar_candidates, [&](int g) {
    return latent_argument(model, variant, t.kind, t.a, t.f, g) > 0.0;
  });
  t.g = nu > 0 ? t.dissimilar_candidates[nu - 1] : t.dissimilar_candidates.front();
}

// Loss terms.

inline double loss_explicit_user(const DualTriplet& t, const Model& model, Variant variant = Variant::mml) {
  return t.weight_user * hinge(explicit_user_argument(t, model, variant));
}

inline double loss_explicit_item(const DualTriplet& t, const Model& model, Variant variant = Variant::mml) {
  return t.weight_item * hinge(explicit_item_argument(t, model, variant));
}

/// lambda * sum L1 + (1 - lambda) * sum L2.
inline double loss_explicit(std::span<const DualTriplet> batch, const Model& model, double lambda,
                            Variant variant = Variant::mml) {
  double l1 = 0.0, l2 = 0.0;
  for (const auto& t : batch) {
    l1 += loss_explicit_user(t, model, variant);
    l2 += loss_explicit_item(t, model, variant);
  }
  return lambda * l1 + (1.0 - lambda) * l2;
}

inline double loss_latent(std::span<const LatentTriplet> batch, const Model& model, Variant variant = Variant::mml) {
  double sum = 0.0;
  for (const auto& t : batch) sum += t.weight * hinge(latent_argument(t, model, variant));
  return sum;
}

inline double loss_mml(double explicit_loss, double latent_loss, double alpha) {
  return alpha * explicit_loss + (1.0 - alpha) * latent_loss;
}

namespace detail {

struct Covariance {
  Matrix cov;         // k x k, 1/O normalized
  RowMatrix centered;  // O x k
};

inline Covariance batch_covariance(const RowMatrix& rows) {
  const auto count = static_cast<double>(rows.rows());
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  RowMatrix centered = rows.rowwise() - mean;
  Matrix cov = (centered.transpose() * centered) / count;
  return {std::move(cov), std::move(centered)};
}

}  // namespace detail

/// L_P = (1/O)(||E||_F - ||diag(E)||_2^2) over the O rows, E their covariance.
/// With `squared` the Frobenius norm is squared. O < 2 yields 0 and sets
/// `degenerate` when provided.
inline double covariance_penalty(const RowMatrix& rows, bool squared = false, bool* degenerate = nullptr) {
  if (degenerate) *degenerate = rows.rows() < 2;
  if (rows.rows() < 2) return 0.0;
  const auto cov = detail::batch_covariance(rows).cov;
  const double fro = squared ? cov.squaredNorm() : cov.norm();
  return (fro - cov.diagonal().squaredNorm()) / static_cast<double>(rows.rows());
}

/// dL_P / d rows, same shape as `rows`.
inline RowMatrix covariance_penalty_gradient(const RowMatrix& rows, bool squared = false) {
  RowMatrix grad = RowMatrix::Zero(rows.rows(), rows.cols());
  if (rows.rows() < 2) return grad;
  const double count = static_cast<double>(rows.rows());
  const auto [cov, centered] = detail::batch_covariance(rows);
  Matrix d_cov;  // dL_P / dE
  if (squared) {
    d_cov = 2.0 * cov;
  } else {
    const double fro = cov.norm();
    d_cov = fro > 0.0 ? Matrix(cov / fro) : Matrix::Zero(cov.rows(), cov.cols());
  }
  d_cov.diagonal() -= 2.0 * cov.diagonal();
  d_cov /= count;
  // dE/de_o contributes (2/O) G c_o; the mean's derivative cancels since sum c_o = 0.
  grad = (2.0 / count) * (centered * d_cov);
  return grad;
}

/// L_R = -(mean mr^u + mean mr^i + mean mr^l).
inline double margin_penalty(const MarginSet& margins) {
  auto mean = [](const Vector& v) { return v.size() ? v.mean() : 0.0; };
  return -(mean(margins.user) + mean(margins.item) + mean(margins.latent));
}

struct TripletBatch {
  std::vector<DualTriplet> dual;
  std::vector<LatentTriplet> latent;
};

/// Sorted distinct entity rows referenced by the batch.
inline std::vector<int> touched_entities(const TripletBatch& batch, const EmbeddingTable& e) {
  std::vector<int> ids;
  ids.reserve(batch.dual.size() * 4 + batch.latent.size() * 3);
  for (const auto& t : batch.dual) {
    ids.push_back(e.user_entity(t.a));
    ids.push_back(e.user_entity(t.b));
    ids.push_back(e.item_entity(t.c));
    ids.push_back(e.item_entity(t.d));
  }
  for (const auto& t : batch.latent) {
    ids.push_back(e.entity(t.kind, t.a));
    ids.push_back(e.entity(t.kind, t.f));
    ids.push_back(e.entity(t.kind, t.g));
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

struct ObjectiveTerms {
  double l_user = 0.0;      // sum of L1 terms
  double l_item = 0.0;      // sum of L2 terms
  double l_explicit = 0.0;  // lambda-weighted combination
  double l_latent = 0.0;
  double l_mml = 0.0;
  double l_covariance = 0.0;
  double l_margin = 0.0;
  double total = 0.0;
  int active_hinges = 0;
};

/// Partial derivatives of the total objective. Embedding gradients are
/// sparse, keyed by entity row.
struct Gradients {
  std::map<int, Vector> embeddings;
  MetricSet metrics;
  MarginSet margins;

  static Gradients zero(int num_users, int num_items, int dim) {
    Gradients g;
    g.metrics = {Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), Matrix::Zero(dim, dim)};
    g.margins = MarginSet::constant(num_users, num_items, 0.0);
    return g;
  }

  Vector& embedding(int entity, int dim) {
    auto it = embeddings.find(entity);
    if (it == embeddings.end()) it = embeddings.emplace(entity, Vector::Zero(dim)).first;
    return it->second;
  }

  void add(const Gradients& other) {
    for (const auto& [id, g] : other.embeddings) embedding(id, static_cast<int>(g.size())) += g;
    for (MetricKind k : kMetricKinds) metrics[k] += other.metrics[k];
    margins.user += other.margins.user;
    margins.item += other.margins.item;
    margins.latent += other.margins.latent;
  }
};

namespace detail {

// Accumulates the hinge part of the objective and its gradient.
class HingeAccumulator {
 public:
  HingeAccumulator(const Model& model, const Hyperparams& hyper, Gradients* grads)
      : model_(model), hyper_(hyper), grads_(grads), frozen_(metrics_frozen(hyper.variant)) {}

  void add_dual(const DualTriplet& t) {
    const auto& e = model_.embeddings;
    const int ea = e.user_entity(t.a), eb = e.user_entity(t.b);
    const int ec = e.item_entity(t.c), ed = e.item_entity(t.d);

    const double user_arg = explicit_user_argument(t, model_, hyper_.variant);
    if (user_arg > 0.0) {
      terms.l_user += t.weight_user * user_arg;
      ++terms.active_hinges;
      if (grads_) {
        const double s = hyper_.alpha * hyper_.lambda * t.weight_user;
        relation(MetricKind::user_item, ea, ec, s);
        relation(MetricKind::user, ea, eb, -s);
        relation(MetricKind::user_item, eb, ec, -s);
        grads_->margins.user[t.a] += s;
      }
    }
    const double item_arg = explicit_item_argument(t, model_, hyper_.variant);
    if (item_arg > 0.0) {
      terms.l_item += t.weight_item * item_arg;
      ++terms.active_hinges;
      if (grads_) {
        const double s = hyper_.alpha * (1.0 - hyper_.lambda) * t.weight_item;
        relation(MetricKind::user_item, ea, ec, s);
        relation(MetricKind::item, ec, ed, -s);
        relation(MetricKind::user_item, ea, ed, -s);
        grads_->margins.item[t.c] += s;
      }
    }
  }

  void add_latent(const LatentTriplet& t) {
    const double arg = latent_argument(t, model_, hyper_.variant);
    if (arg <= 0.0) return;
    terms.l_latent += t.weight * arg;
    ++terms.active_hinges;
    if (!grads_) return;
    const auto& e = model_.embeddings;
    const MetricKind metric = same_kind_metric(t.kind);
    const int ea = e.entity(t.kind, t.a);
    const double s = (1.0 - hyper_.alpha) * t.weight;
    relation(metric, ea, e.entity(t.kind, t.f), s);
    relation(metric, ea, e.entity(t.kind, t.g), -s);
    grads_->margins.latent[ea] += s;
  }

  ObjectiveTerms terms;

 private:
  // Gradient of scale * (e_x - e_y)^T W (e_x - e_y).
  void relation(MetricKind kind, int x, int y, double scale) {
    const auto& e = model_.embeddings;
    const int k = e.dim();
    const Vector d = difference(e.row(x), e.row(y));
    Vector g;
    if (frozen_) {
      g = 2.0 * d;
    } else {
      const Matrix& w = model_.metrics[kind];
      g = w * d + w.transpose() * d;
      grads_->metrics[kind].noalias() += scale * d * d.transpose();
    }
    grads_->embedding(x, k) += scale * g;
    grads_->embedding(y, k) -= scale * g;
  }

  const Model& model_;
  const Hyperparams& hyper_;
  Gradients* grads_;
  bool frozen_;
};

inline void check_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw NumericalError(std::string("non-finite objective term: ") + term);
}

}  // namespace detail

/// Masks or ties gradient groups according to the variant.
inline void apply_variant(Gradients& grads, Variant variant) {
  if (metrics_frozen(variant)) {
    for (MetricKind k : kMetricKinds) grads.metrics[k].setZero();
  } else if (metrics_tied(variant)) {
    const Matrix shared = grads.metrics.w_user + grads.metrics.w_item + grads.metrics.w_user_item;
    for (MetricKind k : kMetricKinds) grads.metrics[k] = shared;
  }
  if (margins_frozen(variant)) {
    grads.margins.user.setZero();
    grads.margins.item.setZero();
    grads.margins.latent.setZero();
  }
}

/// L_MML + omega_P L_P + omega_R L_R for one batch, with analytic gradients
/// when `grads` is non-null. Hinge subgradients at the kink are zero.
/// `workers` > 1 splits the triplet sums across threads and reduces in chunk order.
inline ObjectiveTerms total_objective(const TripletBatch& batch, const Model& model, const Hyperparams& hyper,
                                      Gradients* grads = nullptr, int workers = 1) {
  const auto& e = model.embeddings;
  const int m = e.num_users, n = e.num_items, k = e.dim();
  if (grads) *grads = Gradients::zero(m, n, k);

  ObjectiveTerms terms;
  workers = std::max(1, workers);
  if (workers == 1) {
    detail::HingeAccumulator acc(model, hyper, grads);
    for (const auto& t : batch.dual) acc.add_dual(t);
    for (const auto& t : batch.latent) acc.add_latent(t);
    terms = acc.terms;
  } else {
    std::vector<Gradients> partial(workers);
    std::vector<ObjectiveTerms> partial_terms(workers);
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          Gradients* g = nullptr;
          if (grads) {
            partial[w] = Gradients::zero(m, n, k);
            g = &partial[w];
          }
          detail::HingeAccumulator acc(model, hyper, g);
          auto chunk = [&](std::size_t size) {
            return std::pair{size * w / workers, size * (w + 1) / workers};
          };
          auto [d0, d1] = chunk(batch.dual.size());
          for (auto i = d0; i < d1; ++i) acc.add_dual(batch.dual[i]);
          auto [l0, l1] = chunk(batch.latent.size());
          for (auto i = l0; i < l1; ++i) acc.add_latent(batch.latent[i]);
          partial_terms[w] = acc.terms;
        });
      }
    }
    for (int w = 0; w < workers; ++w) {
      terms.l_user += partial_terms[w].l_user;
      terms.l_item += partial_terms[w].l_item;
      terms.l_latent += partial_terms[w].l_latent;
      terms.active_hinges += partial_terms[w].active_hinges;
      if (grads) grads->add(partial[w]);
    }
  }

  terms.l_explicit = hyper.lambda * terms.l_user + (1.0 - hyper.lambda) * terms.l_item;
  terms.l_mml = loss_mml(terms.l_explicit, terms.l_latent, hyper.alpha);

  const double omega_p = hyper.effective_omega_p();
  const double omega_r = hyper.effective_omega_r();
  const auto touched = touched_entities(batch, e);
  RowMatrix rows(static_cast<Eigen::Index>(touched.size()), k);
  for (std::size_t r = 0; r < touched.size(); ++r) rows.row(static_cast<Eigen::Index>(r)) = e.row(touched[r]);
  terms.l_covariance = covariance_penalty(rows, hyper.covariance_penalty_squared);
  terms.l_margin = margin_penalty(model.margins);
  terms.total = terms.l_mml + omega_p * terms.l_covariance + omega_r * terms.l_margin;

  detail::check_finite(terms.l_user, "explicit user loss");
  detail::check_finite(terms.l_item, "explicit item loss");
  detail::check_finite(terms.l_latent, "latent loss");
  detail::check_finite(terms.l_covariance, "covariance penalty");
  detail::check_finite(terms.l_margin, "margin penalty");

  if (grads) {
    if (omega_p > 0.0 && rows.rows() >= 2) {
      const RowMatrix g = covariance_penalty_gradient(rows, hyper.covariance_penalty_squared);
      for (std::size_t r = 0; r < touched.size(); ++r)
        grads->embedding(touched[r], k) += omega_p * g.row(static_cast<Eigen::Index>(r)).transpose();
    }
    if (omega_r > 0.0) {
      if (m) grads->margins.user.array() -= omega_r / m;
      if (n) grads->margins.item.array() -= omega_r / n;
      if (m + n) grads->margins.latent.array() -= omega_r / (m + n);
    }
    apply_variant(*grads, hyper.variant);
    for (const auto& [id, g] : grads->embeddings)
      if (!g.allFinite()) throw NumericalError("non-finite embedding gradient");
  }
  return terms;
}

}  // namespace mml
