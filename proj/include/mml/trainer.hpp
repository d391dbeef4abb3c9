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
#include "mml/loss.hpp"
#include "mml/metric.hpp"
#include "mml/model.hpp"
#include "mml/sampling.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mml {

inline constexpr double kAdagradEpsilon = 1e-8;
inline constexpr double kBallRadius = 1.0 - 1e-6;
inline constexpr double kInitMean = 0.2;
inline constexpr double kInitVariance = 0.04;

/// Squared-gradient accumulators, one per parameter group.
struct AdagradState {
  RowMatrix embeddings;
  MetricSet metrics;
  MarginSet margins;
};

struct ModelState {
  Model model;
  AdagradState accumulators;
  int epoch = 0;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  Hyperparams hyper;
  int max_epochs = 30;
  double tolerance = 1e-4;
  int patience = 3;
  int num_candidates = 10;
  RankWeighting rank_weighting = RankWeighting::warp;
  std::uint64_t seed = 0;
  int workers = 1;
  /// Size cap of the fixed triplet set the convergence test is evaluated on.
  int monitor_pairs = 1024;
  bool stop_on_convergence = true;

  void validate() const {
    hyper.validate();
    if (max_epochs < 1) throw ValidationError("max_epochs must be at least 1");
    if (!(tolerance > 0)) throw ValidationError("tolerance must be positive");
    if (patience < 1) throw ValidationError("patience must be at least 1");
    if (num_candidates < 1) throw ValidationError("candidate count must be at least 1");
    if (workers < 1) throw ValidationError("workers must be at least 1");
  }
};

/// Per-epoch record. `train` holds batch means of the optimized objective;
/// `monitor` is the objective on the fixed triplet set.
struct EpochRecord {
  int epoch = 0;
  ObjectiveTerms train;
  ObjectiveTerms monitor;
  int batches = 0;
  int skipped_pairs = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochRecord> log;
  bool converged = false;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, ModelState last_good)
      : NumericalError(what), last_good_(std::move(last_good)) {}
  const ModelState& last_good() const { return last_good_; }

 private:
  ModelState last_good_;
};

/// Uniform entries with mean 0.2 and variance 0.04 (half-width sqrt(0.12)),
/// rows then pulled into the open unit ball; identity metrics; margins 0.02.
inline ModelState init_model(int num_users, int num_items, int dim, std::uint64_t seed) {
  if (dim <= 0) throw ValidationError("embedding dimension must be positive");
  if (num_users < 0 || num_items < 0) throw ValidationError("negative entity count");
  ModelState state;
  state.seed = seed;
  Rng rng(seed);
  const double half_width = std::sqrt(3.0 * kInitVariance);
  std::uniform_real_distribution<double> uniform(kInitMean - half_width, kInitMean + half_width);
  auto& e = state.model.embeddings;
  e.num_users = num_users;
  e.num_items = num_items;
  e.vectors.resize(num_users + num_items, dim);
  for (Eigen::Index r = 0; r < e.vectors.rows(); ++r)
    for (Eigen::Index c = 0; c < dim; ++c) e.vectors(r, c) = uniform(rng);
  for (Eigen::Index r = 0; r < e.vectors.rows(); ++r) {
    const double norm = e.vectors.row(r).norm();
    if (norm >= 1.0) e.vectors.row(r) *= kBallRadius / norm;
  }
  state.model.metrics = MetricSet::identity(dim);
  state.model.margins = MarginSet::constant(num_users, num_items, kDefaultMargin);
  state.accumulators.embeddings = RowMatrix::Zero(num_users + num_items, dim);
  state.accumulators.metrics = {Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), Matrix::Zero(dim, dim)};
  state.accumulators.margins = MarginSet::constant(num_users, num_items, 0.0);
  return state;
}

/// acc += g^2; param -= lr * g / (sqrt(acc) + eps), elementwise.
template <class Param, class Grad, class Acc>
void adagrad_step(Param&& param, const Grad& grad, double lr, Acc&& acc, double eps = kAdagradEpsilon) {
  if (!grad.allFinite()) throw NumericalError("non-finite gradient in AdaGrad step");
  acc.array() += grad.array().square();
  param.array() -= lr * grad.array() / (acc.array().sqrt() + eps);
}

/// Unit ball for embeddings, [1e-3, 1] for margins, PSD for metrics.
/// Frozen (Euclidean) metrics are left untouched.
inline void project_constraints(Model& model, Variant variant = Variant::mml) {
  auto& v = model.embeddings.vectors;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double norm = v.row(r).norm();
    if (norm >= 1.0) v.row(r) *= kBallRadius / norm;
  }
  for (Vector* margins : {&model.margins.user, &model.margins.item, &model.margins.latent})
    *margins = margins->cwiseMax(kMarginFloor).cwiseMin(kMarginCeiling);
  if (!metrics_frozen(variant))
    for (MetricKind k : kMetricKinds) model.metrics[k] = project_psd(model.metrics[k]);
}

/// Empty when every ModelState invariant holds, else a description of the first failure.
inline std::string describe_invariant_violation(const ModelState& state, double symmetry_tol = 1e-9,
                                                double psd_tol = 1e-8) {
  const auto& model = state.model;
  const auto& v = model.embeddings.vectors;
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    if (!(v.row(r).squaredNorm() < 1.0)) return "embedding row " + std::to_string(r) + " outside the unit ball";
  for (const Vector* margins : {&model.margins.user, &model.margins.item, &model.margins.latent})
    if (margins->size() && !(margins->minCoeff() > 0.0 && margins->maxCoeff() <= 1.0)) return "margin outside (0,1]";
  for (MetricKind k : kMetricKinds) {
    const Matrix& w = model.metrics[k];
    if (max_asymmetry(w) > symmetry_tol) return "metric not symmetric";
    if (min_eigenvalue(w) < -psd_tol) return "metric not PSD";
  }
  const auto& acc = state.accumulators;
  if (acc.embeddings.size() && acc.embeddings.minCoeff() < 0) return "negative accumulator";
  return {};
}

/// One training run over a fixed training split, looping at epoch
/// granularity. Similar-pair sets and the monitor triplets are built once at
/// construction.
class Trainer {
 public:
  Trainer(const DatasetSplit& split, TrainConfig config)
      : train_(split.train), config_(std::move(config)) {
    config_.validate();
    if (train_.positive_pairs().empty()) throw EmptyDatasetError("training split has no positive pairs");
    sets_ = build_similar_pair_sets(train_, config_.hyper.theta);
    build_monitor(split);
  }

  const SimilarPairSets& similar_pairs() const { return sets_; }
  const TripletBatch& monitor_batch() const { return monitor_; }
  const TrainConfig& config() const { return config_; }

  ModelState initial_state() const {
    return init_model(train_.num_users(), train_.num_items(), config_.hyper.dim, config_.seed);
  }

  /// Objective on the fixed monitor triplets. Contrasts and rank weights are
  /// re-derived from their fixed candidate pools under `model`, as in training.
  ObjectiveTerms monitor_objective(const Model& model) const {
    TripletBatch batch = monitor_;
    prepare(batch, model);
    return total_objective(batch, model, config_.hyper);
  }

  /// Applies the hard-negative choice and rank weights for `model`.
  void prepare(TripletBatch& batch, const Model& model) const {
    const Variant variant = config_.hyper.variant;
    const RankWeighting weighting = config_.rank_weighting;
    for (auto& dual : batch.dual) {
      choose_contrasts(dual, model, variant);
      dual.weight_user = rank_weight(dual, TripletSide::user, model, variant, weighting);
      dual.weight_item = rank_weight(dual, TripletSide::item, model, variant, weighting);
    }
    for (auto& latent : batch.latent) {
      if (weighting == RankWeighting::warp) promote_first_violator(latent, model, variant);
      latent.weight = rank_weight(latent, model, variant, weighting);
    }
  }

  /// Samples one batch of dual and latent triplets against the current model.
  TripletBatch sample_batch(const Model& model, Rng& rng, int* skipped = nullptr) const {
    const auto& hyper = config_.hyper;
    const int j = config_.num_candidates;
    TripletBatch batch;
    for (const auto& pair : sample_positive_batch(train_, hyper.batch_size, rng)) {
      if (auto dual = sample_dual_triplet(pair, train_, model, j, rng, hyper.variant))
        batch.dual.push_back(std::move(*dual));
      else if (skipped)
        ++*skipped;
      for (auto [kind, anchor] : {std::pair{EntityKind::user, pair.user}, std::pair{EntityKind::item, pair.item}})
        if (auto latent = sample_latent_triplet(anchor, sets_, kind, rng, j)) batch.latent.push_back(std::move(*latent));
    }
    prepare(batch, model);
    return batch;
  }

  /// Applies one batch gradient: embeddings, then metrics, then margins, then
  /// a single projection pass.
  ObjectiveTerms step(ModelState& state, const TripletBatch& batch) const {
    const auto& hyper = config_.hyper;
    Gradients grads;
    const auto terms = total_objective(batch, state.model, hyper, &grads, config_.workers);
    auto& model = state.model;
    auto& acc = state.accumulators;
    const double lr = hyper.learning_rate;
    for (const auto& [entity, g] : grads.embeddings)
      adagrad_step(model.embeddings.vectors.row(entity), g.transpose(), lr, acc.embeddings.row(entity));
    if (!metrics_frozen(hyper.variant))
      for (MetricKind k : kMetricKinds) adagrad_step(model.metrics[k], grads.metrics[k], lr, acc.metrics[k]);
    if (!margins_frozen(hyper.variant)) {
      adagrad_step(model.margins.user, grads.margins.user, lr, acc.margins.user);
      adagrad_step(model.margins.item, grads.margins.item, lr, acc.margins.item);
      adagrad_step(model.margins.latent, grads.margins.latent, lr, acc.margins.latent);
    }
    project_constraints(model, hyper.variant);
    return terms;
  }

  /// Runs epoch `state.epoch + 1`. The epoch's randomness depends only on
  /// (seed, epoch), so a resumed run replays the same stream.
  EpochRecord run_epoch(ModelState& state) const {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord record;
    record.epoch = state.epoch + 1;
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(record.epoch)};
    Rng rng(seq);
    const auto positives = train_.positive_pairs().size();
    const auto batch_size = static_cast<std::size_t>(config_.hyper.batch_size);
    record.batches = static_cast<int>((positives + batch_size - 1) / batch_size);
    for (int b = 0; b < record.batches; ++b) {
      const auto batch = sample_batch(state.model, rng, &record.skipped_pairs);
      const auto terms = step(state, batch);
      accumulate(record.train, terms);
    }
    scale(record.train, 1.0 / record.batches);
    record.monitor = monitor_objective(state.model);
    state.epoch = record.epoch;
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
  }

 private:
  static void accumulate(ObjectiveTerms& into, const ObjectiveTerms& t) {
    into.l_user += t.l_user;
    into.l_item += t.l_item;
    into.l_explicit += t.l_explicit;
    into.l_latent += t.l_latent;
    into.l_mml += t.l_mml;
    into.l_covariance += t.l_covariance;
    into.l_margin += t.l_margin;
    into.total += t.total;
    into.active_hinges += t.active_hinges;
  }

  static void scale(ObjectiveTerms& t, double s) {
    for (double* v : {&t.l_user, &t.l_item, &t.l_explicit, &t.l_latent, &t.l_mml, &t.l_covariance, &t.l_margin,
                      &t.total})
      *v *= s;
  }

  // Fixed pairs and candidate pools, anchored on validation positives when
  // the split has any, else on training positives.
  void build_monitor(const DatasetSplit& split) {
    const auto& source = split.validation.positive_pairs().empty() ? train_.positive_pairs()
                                                                    : split.validation.positive_pairs();
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      0x6d6f6eu};
    Rng rng(seq);
    std::vector<UserItem> pairs(source.begin(), source.end());
    std::shuffle(pairs.begin(), pairs.end(), rng);
    if (static_cast<int>(pairs.size()) > config_.monitor_pairs) pairs.resize(config_.monitor_pairs);
    // Contrasts are re-chosen at evaluation time, so any model will do here.
    const Model placeholder = init_model(train_.num_users(), train_.num_items(), 1, 0).model;
    const int j = config_.num_candidates;
    for (const auto& pair : pairs) {
      if (auto dual = sample_dual_triplet(pair, train_, placeholder, j, rng)) monitor_.dual.push_back(*dual);
      for (auto [kind, anchor] : {std::pair{EntityKind::user, pair.user}, std::pair{EntityKind::item, pair.item}})
        if (auto latent = sample_latent_triplet(anchor, sets_, kind, rng, j)) monitor_.latent.push_back(*latent);
    }
  }

  const RatingDataset& train_;
  TrainConfig config_;
  SimilarPairSets sets_;
  TripletBatch monitor_;
};

using EpochCallback = std::function<void(const ModelState&, const EpochRecord&)>;

/// Trains until max_epochs or until the monitor objective's relative
/// improvement stays below `tolerance` for `patience` consecutive epochs.
/// Throws DivergenceError (carrying the last good state) when the objective
/// turns non-finite or grows 10x beyond its first-epoch value.
inline TrainResult train(const DatasetSplit& split, const TrainConfig& config,
                         std::optional<ModelState> resume = std::nullopt, const EpochCallback& on_epoch = {}) {
  Trainer trainer(split, config);
  TrainResult result;
  result.state = resume ? std::move(*resume) : trainer.initial_state();
  const auto& e = result.state.model.embeddings;
  if (e.num_users != split.train.num_users() || e.num_items != split.train.num_items() ||
      e.dim() != config.hyper.dim)
    throw ValidationError("model state does not match the dataset shape");

  std::optional<double> first, previous;
  int stalled = 0;
  while (result.state.epoch < config.max_epochs) {
    ModelState last_good = result.state;
    EpochRecord record;
    try {
      record = trainer.run_epoch(result.state);
    } catch (const NumericalError& err) {
      throw DivergenceError(std::string("training diverged: ") + err.what(), std::move(last_good));
    }
    const double objective = record.monitor.total;
    if (!std::isfinite(objective) || !std::isfinite(record.train.total))
      throw DivergenceError("training diverged: non-finite objective", std::move(last_good));
    if (!first) first = objective;
    if (objective > *first + 9.0 * std::max(std::abs(*first), 1e-6))
      throw DivergenceError("training diverged: objective grew 10x over its first-epoch value", std::move(last_good));
    result.log.push_back(record);
    if (on_epoch) on_epoch(result.state, record);

    if (previous) {
      const double improvement = (*previous - objective) / std::max(std::abs(*previous), 1e-12);
      stalled = improvement < config.tolerance ? stalled + 1 : 0;
    }
    previous = objective;
    if (config.stop_on_convergence && stalled >= config.patience) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// Checkpoint: magic, version, m, n, k, epoch, seed, then the embedding block,
// the three metrics, the three margin vectors and every accumulator, all
// little-endian float64 in row-major order.

inline constexpr std::uint32_t kCheckpointMagic = 0x434C4D4D;  // "MMLC"
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelState& state, std::ostream& out) {
  const auto& e = state.model.embeddings;
  io::write_le<std::uint32_t>(out, kCheckpointMagic);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.num_users));
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.num_items));
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.dim()));
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(state.epoch));
  io::write_le<std::uint64_t>(out, state.seed);
  auto write_group = [&](const RowMatrix& emb, const MetricSet& w, const MarginSet& mr) {
    io::write_block(out, emb);
    for (MetricKind k : kMetricKinds) io::write_block(out, w[k]);
    io::write_block(out, mr.user);
    io::write_block(out, mr.item);
    io::write_block(out, mr.latent);
  };
  write_group(e.vectors, state.model.metrics, state.model.margins);
  write_group(state.accumulators.embeddings, state.accumulators.metrics, state.accumulators.margins);
}

inline ModelState load_checkpoint(std::istream& in) {
  if (io::read_le<std::uint32_t>(in) != kCheckpointMagic) throw ValidationError("not a checkpoint (bad magic)");
  if (const auto version = io::read_le<std::uint32_t>(in); version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto m = static_cast<int>(io::read_le<std::uint64_t>(in));
  const auto n = static_cast<int>(io::read_le<std::uint64_t>(in));
  const auto k = static_cast<int>(io::read_le<std::uint64_t>(in));
  ModelState state;
  state.epoch = static_cast<int>(io::read_le<std::uint64_t>(in));
  state.seed = io::read_le<std::uint64_t>(in);
  auto read_group = [&](RowMatrix& emb, MetricSet& w, MarginSet& mr) {
    emb.resize(m + n, k);
    io::read_block(in, emb);
    for (MetricKind kind : kMetricKinds) {
      w[kind].resize(k, k);
      io::read_block(in, w[kind]);
    }
    mr = MarginSet::constant(m, n, 0.0);
    io::read_block(in, mr.user);
    io::read_block(in, mr.item);
    io::read_block(in, mr.latent);
  };
  state.model.embeddings.num_users = m;
  state.model.embeddings.num_items = n;
  read_group(state.model.embeddings.vectors, state.model.metrics, state.model.margins);
  read_group(state.accumulators.embeddings, state.accumulators.metrics, state.accumulators.margins);
  return state;
}

inline void save_checkpoint(const ModelState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint '" + path + "'");
  save_checkpoint(state, out);
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

inline void write_training_log_header(std::ostream& out) {
  out << "epoch,l1,l2,l_ex,l_la,l_p,l_r,total,monitor_total,active_hinges,skipped_pairs,wall_seconds\n";
}

inline void write_training_log_row(std::ostream& out, const EpochRecord& r) {
  const auto& t = r.train;
  out << std::setprecision(10) << r.epoch << ',' << t.l_user << ',' << t.l_item << ',' << t.l_explicit << ','
      << t.l_latent << ',' << t.l_covariance << ',' << t.l_margin << ',' << t.total << ',' << r.monitor.total << ','
      << t.active_hinges << ',' << r.skipped_pairs << ',' << r.wall_seconds << '\n';
}

}  // namespace mml
