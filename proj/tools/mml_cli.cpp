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


// mml: train, evaluate and ablate metric-learning recommenders.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

#include "CLI11.hpp"
#include "mml/mml.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

// Everything needed to reproduce a training run. Frozen to config.toml.
struct RunOptions {
  std::string data;
  std::string format = "auto";
  double threshold = mml::kDefaultPositivityThreshold;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double train_ratio = 0.6, validation_ratio = 0.2, test_ratio = 0.2;
  std::string variant = "mml";
  mml::Hyperparams hyper;
  int epochs = 30;
  double tolerance = 1e-4;
  int patience = 3;
  bool early_stop = true;
  int candidates = 10;
  std::string rank_weighting = "warp";
  int workers = 1;
  int monitor_pairs = 1024;
  std::string resume;
};

struct EvalOptions {
  std::string run_dir, checkpoint, run_config, out;
  std::string labels;
  std::vector<int> clusters{10, 20};
  std::vector<std::uint64_t> kmeans_seeds{1, 2, 3, 4, 5};
  std::string space = "metric";
  std::vector<int> k_rec{10, 50};
  std::string mode = "both";
  int k_nn = 20;
  std::string split = "test";
};

void add_run_options(CLI::App* sub, RunOptions& o) {
  sub->add_option("--data", o.data, "ratings file (user, item, rating)");
  sub->add_option("--format", o.format, "tsv, csv or auto (by extension)");
  sub->add_option("--threshold", o.threshold, "positivity threshold");
  sub->add_option("--seed", o.seed, "run seed (required)");
  sub->add_option("--split-seed", o.split_seed, "seed of the train/validation/test split");
  sub->add_option("--train-ratio", o.train_ratio);
  sub->add_option("--validation-ratio", o.validation_ratio);
  sub->add_option("--test-ratio", o.test_ratio);
  sub->add_option("--variant", o.variant, "mml, euc-mml, w-mml, m-mml, np-mml or nr-mml");
  sub->add_option("--alpha", o.hyper.alpha);
  sub->add_option("--lambda", o.hyper.lambda);
  sub->add_option("--theta", o.hyper.theta, "Jaccard threshold for similar pairs");
  sub->add_option("--omega-p", o.hyper.omega_p, "covariance penalty weight");
  sub->add_option("--omega-r", o.hyper.omega_r, "margin penalty weight");
  sub->add_option("--lr", o.hyper.learning_rate);
  sub->add_option("--dim", o.hyper.dim);
  sub->add_option("--batch-size", o.hyper.batch_size);
  sub->add_option("--covariance-squared", o.hyper.covariance_penalty_squared, "square the Frobenius norm in L_P");
  sub->add_option("--epochs", o.epochs);
  sub->add_option("--tolerance", o.tolerance, "relative improvement below which an epoch counts as stalled");
  sub->add_option("--patience", o.patience);
  sub->add_option("--early-stop", o.early_stop, "stop once converged");
  sub->add_option("--candidates", o.candidates, "negative draws per triplet (J)");
  sub->add_option("--rank-weighting", o.rank_weighting, "warp or constant");
  sub->add_option("--workers", o.workers, "gradient workers (1 is bitwise deterministic)");
  sub->add_option("--monitor-pairs", o.monitor_pairs);
  sub->add_option("--resume", o.resume, "continue from this checkpoint up to --epochs");
}

void add_source_options(CLI::App* sub, EvalOptions& e) {
  sub->add_option("--run", e.run_dir, "directory written by `mml train`");
  sub->add_option("--checkpoint", e.checkpoint, "checkpoint file (instead of --run)");
  sub->add_option("--run-config", e.run_config, "frozen run config (instead of --run)");
  sub->add_option("--out", e.out, "output directory");
}

void add_nmi_options(CLI::App* sub, EvalOptions& e) {
  sub->add_option("--labels", e.labels, "item labels (item_token, label)");
  sub->add_option("--clusters", e.clusters, "cluster counts")->delimiter(',');
  sub->add_option("--kmeans-seeds", e.kmeans_seeds, "k-means seeds")->delimiter(',');
  sub->add_option("--space", e.space, "metric or raw item vectors");
}

void add_rec_options(CLI::App* sub, EvalOptions& e) {
  sub->add_option("--krec", e.k_rec, "list lengths")->delimiter(',');
  sub->add_option("--mode", e.mode, "ubcf, ibcf or both");
  sub->add_option("--knn", e.k_nn, "neighbors for ubcf");
  sub->add_option("--split", e.split, "test or validation");
}

std::string absolute(const std::string& path) { return path.empty() ? path : fs::absolute(path).lexically_normal().string(); }

std::string freeze(RunOptions o) {
  o.data = absolute(o.data);
  o.resume = absolute(o.resume);
  CLI::App app;
  app.option_defaults()->always_capture_default();
  add_run_options(app.add_subcommand("train"), o);
  return app.config_to_str(true, false);
}

RunOptions thaw(const std::string& path) {
  if (!fs::exists(path)) throw mml::ValidationError("run config '" + path + "' does not exist");
  RunOptions o;
  CLI::App app;
  app.set_config("--config");
  auto* sub = app.add_subcommand("train");
  sub->fallthrough();
  add_run_options(sub, o);
  try {
    app.parse(std::vector<std::string>{path, "--config", "train"});
  } catch (const CLI::ParseError& e) {
    throw mml::ValidationError("cannot read run config '" + path + "': " + e.what());
  }
  return o;
}

void validate(const RunOptions& o, const CLI::App* sub) {
  if (sub && sub->count("--seed") == 0) throw mml::ValidationError("--seed is required");
  if (o.data.empty()) throw mml::ValidationError("--data is required");
  if (!fs::is_regular_file(o.data)) throw mml::ValidationError("data file '" + o.data + "' does not exist");
  mml::parse_variant(o.variant);
  mml::parse_rank_weighting(o.rank_weighting);
}

mml::RatingFormat format_of(const RunOptions& o) {
  if (o.format != "auto") return mml::parse_format(o.format);
  return fs::path(o.data).extension() == ".csv" ? mml::RatingFormat::csv : mml::RatingFormat::tsv;
}

mml::TrainConfig train_config(const RunOptions& o) {
  mml::TrainConfig c;
  c.hyper = o.hyper;
  c.hyper.variant = mml::parse_variant(o.variant);
  c.max_epochs = o.epochs;
  c.tolerance = o.tolerance;
  c.patience = o.patience;
  c.stop_on_convergence = o.early_stop;
  c.num_candidates = o.candidates;
  c.rank_weighting = mml::parse_rank_weighting(o.rank_weighting);
  c.seed = o.seed;
  c.workers = o.workers;
  c.monitor_pairs = o.monitor_pairs;
  c.validate();
  return c;
}

// The entity-index sidecar, when present, pins the dense ids.
mml::RatingDataset load_data(const RunOptions& o) {
  mml::LoadOptions load;
  load.threshold = o.threshold;
  const auto sidecar = mml::entity_index_path(o.data);
  if (fs::exists(sidecar)) load.fixed_index = mml::load_entity_index(sidecar, format_of(o));
  return mml::load_ratings(o.data, format_of(o), load);
}

mml::DatasetSplit split_of(const RunOptions& o, const mml::RatingDataset& data) {
  return mml::split_dataset(data, {o.train_ratio, o.validation_ratio, o.test_ratio}, o.split_seed);
}

std::string output_dir(const std::string& given, const std::string& fallback) {
  std::string dir = given;
  if (dir.empty())
    if (const char* env = std::getenv("MML_OUTPUT_DIR")) dir = env;
  if (dir.empty()) dir = fallback;
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw mml::ValidationError("cannot write '" + path.string() + "'");
  return out;
}

// Writes config.toml, checkpoint.bin and train_log.csv into `dir`. On
// divergence the last good state is checkpointed and the error is rethrown.
mml::TrainResult run_training(const RunOptions& o, const mml::DatasetSplit& split, const fs::path& dir) {
  const auto config = train_config(o);
  fs::create_directories(dir);
  open_output(dir / "config.toml") << freeze(o);
  auto log = open_output(dir / "train_log.csv");
  mml::write_training_log_header(log);
  std::optional<mml::ModelState> start;
  if (!o.resume.empty()) start = mml::load_checkpoint(o.resume);
  try {
    auto result = mml::train(split, config, std::move(start), [&](const mml::ModelState&, const mml::EpochRecord& r) {
      mml::write_training_log_row(log, r);
      log.flush();
    });
    mml::save_checkpoint(result.state, (dir / "checkpoint.bin").string());
    return result;
  } catch (const mml::DivergenceError& e) {
    mml::save_checkpoint(e.last_good(), (dir / "checkpoint.bin").string());
    throw;
  }
}

struct LoadedRun {
  RunOptions options;
  mml::ModelState state;
  mml::RatingDataset data;
};

LoadedRun load_run(const EvalOptions& e) {
  std::string config_path = e.run_config, checkpoint_path = e.checkpoint;
  if (!e.run_dir.empty()) {
    if (config_path.empty()) config_path = (fs::path(e.run_dir) / "config.toml").string();
    if (checkpoint_path.empty()) checkpoint_path = (fs::path(e.run_dir) / "checkpoint.bin").string();
  }
  if (config_path.empty() || checkpoint_path.empty())
    throw mml::ValidationError("give --run DIR, or both --checkpoint and --run-config");
  LoadedRun run;
  run.options = thaw(config_path);
  validate(run.options, nullptr);
  run.state = mml::load_checkpoint(checkpoint_path);
  run.data = load_data(run.options);
  const auto& emb = run.state.model.embeddings;
  if (emb.num_users != run.data.num_users() || emb.num_items != run.data.num_items())
    throw mml::ValidationError("checkpoint is " + std::to_string(emb.num_users) + "x" +
                               std::to_string(emb.num_items) + " but the dataset is " +
                               std::to_string(run.data.num_users()) + "x" + std::to_string(run.data.num_items()));
  return run;
}

std::string join(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (auto v : seeds) s += (s.empty() ? "" : ";") + std::to_string(v);
  return s;
}

struct NmiReport {
  std::vector<mml::ResultRow> raw, summary;
  std::vector<std::string> contingency;  // K,seed,label,cluster,count
};

NmiReport nmi_report(const mml::Model& model, const std::vector<int>& labels, const EvalOptions& e) {
  std::vector<int> labeled;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    if (labels[i] >= 0) labeled.push_back(i);
  if (labeled.empty()) throw mml::ValidationError("no dataset item has a label in '" + e.labels + "'");
  const auto space = e.space == "raw" ? mml::EmbeddingSpace::raw : mml::EmbeddingSpace::metric;
  if (e.space != "raw" && e.space != "metric") throw mml::ValidationError("--space must be metric or raw");
  const mml::RowMatrix vectors = mml::item_vectors(model, space);
  NmiReport report;
  for (int k : e.clusters) {
    std::vector<double> values;
    for (auto seed : e.kmeans_seeds) {
      const auto km = mml::spherical_kmeans(vectors, k, seed);
      mml::ClusterAssignment a;
      a.K = k;
      for (int i : labeled) {
        a.labels.push_back(labels[i]);
        a.clusters.push_back(km.clusters[i]);
      }
      const double value = mml::nmi(a);
      values.push_back(value);
      report.raw.push_back({"nmi", k, value, static_cast<int>(labeled.size()), std::to_string(seed), std::nullopt});
      for (const auto& [key, count] : mml::contingency_table(a))
        report.contingency.push_back(std::to_string(k) + ',' + std::to_string(seed) + ',' + std::to_string(key.first) +
                                     ',' + std::to_string(key.second) + ',' + std::to_string(count));
    }
    const auto [mean, sd] = mml::mean_and_std(values);
    report.summary.push_back({"nmi_mean", k, mean, static_cast<int>(labeled.size()), join(e.kmeans_seeds), sd});
  }
  return report;
}

std::vector<mml::RecommenderMode> modes_of(const std::string& mode) {
  if (mode == "both") return {mml::RecommenderMode::ubcf, mml::RecommenderMode::ibcf};
  return {mml::parse_mode(mode)};
}

std::vector<mml::ResultRow> rec_report(const mml::Model& model, const mml::DatasetSplit& split, const RunOptions& o,
                                       const EvalOptions& e) {
  if (e.k_rec.empty()) throw mml::ValidationError("--krec needs at least one value");
  if (e.split != "test" && e.split != "validation") throw mml::ValidationError("--split must be test or validation");
  const auto& held_out = e.split == "test" ? split.test : split.validation;
  const int k_max = *std::max_element(e.k_rec.begin(), e.k_rec.end());
  std::vector<mml::ResultRow> rows;
  for (auto mode : modes_of(e.mode)) {
    const auto result = mml::evaluate_rankings(model, split.train, held_out, k_max, mode, e.k_nn);
    const int n = static_cast<int>(result.rows.size());
    const std::string suffix = std::string("_") + mml::to_string(mode);
    for (int k : e.k_rec) {
      rows.push_back({"hr" + suffix, k, mml::hit_ratio_at_k(result, k), n, std::to_string(o.split_seed), std::nullopt});
      rows.push_back({"recall" + suffix, k, mml::recall_at_k(result, k), n, std::to_string(o.split_seed), std::nullopt});
    }
  }
  return rows;
}

void print_rows(const std::vector<mml::ResultRow>& rows) {
  for (const auto& r : rows) {
    std::cout << r.metric << '@' << r.k << " = " << r.value;
    if (r.std_dev) std::cout << " (std " << *r.std_dev << ')';
    std::cout << '\n';
  }
}

int cmd_train(const RunOptions& o, const CLI::App* sub, const std::string& out) {
  validate(o, sub);
  const auto dir = output_dir(out, "mml-run");
  const auto data = load_data(o);
  const auto split = split_of(o, data);
  const auto result = run_training(o, split, dir);
  const auto& last = result.log.back();
  std::cout << "trained " << o.variant << " for " << last.epoch << " epochs" << (result.converged ? " (converged)" : "")
            << ", objective " << last.monitor.total << "; wrote " << dir << '\n';
  return 0;
}

int cmd_eval_nmi(const EvalOptions& e) {
  const auto run = load_run(e);
  if (e.labels.empty()) throw mml::ValidationError("--labels is required");
  if (!fs::is_regular_file(e.labels)) throw mml::ValidationError("label file '" + e.labels + "' does not exist");
  const auto labels = mml::load_item_labels(e.labels, format_of(run.options), *run.data.index());
  const auto report = nmi_report(run.state.model, labels, e);
  const fs::path dir = output_dir(e.out, e.run_dir.empty() ? "." : e.run_dir);
  auto rows = report.raw;
  rows.insert(rows.end(), report.summary.begin(), report.summary.end());
  auto out = open_output(dir / "nmi.csv");
  mml::write_result_rows(out, rows);
  auto table = open_output(dir / "nmi_contingency.csv");
  table << "K,seed,label,cluster,count\n";
  for (const auto& line : report.contingency) table << line << '\n';
  print_rows(report.summary);
  return 0;
}

int cmd_eval_rec(const EvalOptions& e) {
  const auto run = load_run(e);
  const auto split = split_of(run.options, run.data);
  const auto rows = rec_report(run.state.model, split, run.options, e);
  const fs::path dir = output_dir(e.out, e.run_dir.empty() ? "." : e.run_dir);
  auto out = open_output(dir / "rec.csv");
  mml::write_result_rows(out, rows);
  print_rows(rows);
  return 0;
}

int cmd_export(const EvalOptions& e) {
  const auto run = load_run(e);
  const fs::path dir = output_dir(e.out, e.run_dir.empty() ? "." : e.run_dir);
  const auto& emb = run.state.model.embeddings;
  const auto* index = run.data.index();
  auto out = open_output(dir / "embeddings.tsv");
  out << std::setprecision(17);
  for (int r = 0; r < emb.num_users + emb.num_items; ++r) {
    const bool user = r < emb.num_users;
    const int id = user ? r : r - emb.num_users;
    const auto kind = user ? mml::EntityKind::user : mml::EntityKind::item;
    out << mml::to_string(kind) << '\t' << index->token(kind, id);
    for (Eigen::Index c = 0; c < emb.dim(); ++c) out << '\t' << emb.vectors(r, c);
    out << '\n';
  }
  const auto& w = run.state.model.metrics;
  auto metrics = open_output(dir / "metrics.txt");
  mml::write_metrics_text(metrics, {w.w_user, w.w_item, w.w_user_item});
  std::cout << "wrote " << (dir / "embeddings.tsv").string() << " and metrics.txt\n";
  return 0;
}

// Trains every variant with the shared seed into <out>/<variant>/ and writes
// ablation.csv. A failing variant is flagged and the others still run.
int cmd_ablate(const RunOptions& base, const CLI::App* sub, const EvalOptions& e) {
  validate(base, sub);
  const fs::path dir = output_dir(e.out, "mml-ablation");
  const auto data = load_data(base);
  const auto split = split_of(base, data);
  std::vector<int> labels;
  if (!e.labels.empty()) {
    if (!fs::is_regular_file(e.labels)) throw mml::ValidationError("label file '" + e.labels + "' does not exist");
    labels = mml::load_item_labels(e.labels, format_of(base), *data.index());
  }
  auto table = open_output(dir / "ablation.csv");
  table << "variant,status,epochs";
  if (!labels.empty())
    for (int k : e.clusters) table << ",nmi_" << k;
  for (auto mode : modes_of(e.mode))
    for (int k : e.k_rec) table << ",hr_" << mml::to_string(mode) << '_' << k << ",recall_" << mml::to_string(mode) << '_' << k;
  table << '\n' << std::setprecision(10);
  int exit_code = 0;
  for (mml::Variant v : mml::kAllVariants) {
    RunOptions o = base;
    o.variant = mml::to_string(v);
    o.resume.clear();
    table << o.variant;
    try {
      const auto result = run_training(o, split, dir / o.variant);
      table << ",ok," << result.log.back().epoch;
      if (!labels.empty())
        for (const auto& row : nmi_report(result.state.model, labels, e).summary) table << ',' << row.value;
      for (const auto& row : rec_report(result.state.model, split, o, e)) table << ',' << row.value;
      std::cout << o.variant << ": ok\n";
    } catch (const mml::NumericalError& err) {
      table << ",failed: " << err.what() << ",";
      std::cerr << o.variant << ": " << err.what() << '\n';
      exit_code = kExitNumerical;
    } catch (const mml::Error& err) {
      table << ",failed: " << err.what() << ",";
      std::cerr << o.variant << ": " << err.what() << '\n';
      if (exit_code == 0) exit_code = kExitInput;
    }
    table << '\n';
    table.flush();
  }
  std::cout << "wrote " << (dir / "ablation.csv").string() << '\n';
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric-learning matrix embedding for recommendation"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "read options from a TOML file; flags override it");
  app.require_subcommand(1);

  RunOptions run, ablate_run;
  EvalOptions nmi_eval, rec_eval, export_eval, ablate_eval;
  std::string train_out;

  auto* train = app.add_subcommand("train", "train one model");
  add_run_options(train, run);
  train->add_option("--out", train_out, "output directory (default $MML_OUTPUT_DIR)");

  auto* eval_nmi = app.add_subcommand("eval-nmi", "cluster item embeddings and score them against labels");
  add_source_options(eval_nmi, nmi_eval);
  add_nmi_options(eval_nmi, nmi_eval);

  auto* eval_rec = app.add_subcommand("eval-rec", "HR@K and Recall@K of neighbor recommenders");
  add_source_options(eval_rec, rec_eval);
  add_rec_options(eval_rec, rec_eval);

  auto* ablate = app.add_subcommand("ablate", "train and evaluate all six variants");
  add_run_options(ablate, ablate_run);
  ablate->add_option("--out", ablate_eval.out, "output directory");
  add_nmi_options(ablate, ablate_eval);
  add_rec_options(ablate, ablate_eval);

  auto* export_cmd = app.add_subcommand("export-embeddings", "write embeddings with entity tokens");
  add_source_options(export_cmd, export_eval);

  for (auto* sub : {train, eval_nmi, eval_rec, ablate, export_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (train->parsed()) return cmd_train(run, train, train_out);
    if (eval_nmi->parsed()) return cmd_eval_nmi(nmi_eval);
    if (eval_rec->parsed()) return cmd_eval_rec(rec_eval);
    if (ablate->parsed()) return cmd_ablate(ablate_run, ablate, ablate_eval);
    if (export_cmd->parsed()) return cmd_export(export_eval);
  } catch (const mml::NumericalError& e) {
    std::cerr << "mml: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const mml::Error& e) {
    std::cerr << "mml: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "mml: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
