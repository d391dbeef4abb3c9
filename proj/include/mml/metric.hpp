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

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace mml {

/// Unified latent table: users occupy rows [0, m), items rows [m, m + n).
struct EmbeddingTable {
  int num_users = 0;
  int num_items = 0;
  RowMatrix vectors;

  int dim() const { return static_cast<int>(vectors.cols()); }
  int num_entities() const { return num_users + num_items; }
  int user_entity(int user) const { return user; }
  int item_entity(int item) const { return num_users + item; }
  int entity(EntityKind kind, int id) const { return kind == EntityKind::user ? user_entity(id) : item_entity(id); }

  auto row(int entity) { return vectors.row(entity); }
  auto row(int entity) const { return vectors.row(entity); }
  auto user(int u) const { return vectors.row(user_entity(u)); }
  auto item(int i) const { return vectors.row(item_entity(i)); }
};

enum class MetricKind { user, item, user_item };

inline constexpr std::array<MetricKind, 3> kMetricKinds = {MetricKind::user, MetricKind::item,
                                                           MetricKind::user_item};

/// W^U (user-user), W^I (item-item) and W^UI (user-item).
struct MetricSet {
  Matrix w_user;
  Matrix w_item;
  Matrix w_user_item;

  static MetricSet identity(int k) {
    return {Matrix::Identity(k, k), Matrix::Identity(k, k), Matrix::Identity(k, k)};
  }

  Matrix& operator[](MetricKind kind) {
    switch (kind) {
      case MetricKind::user: return w_user;
      case MetricKind::item: return w_item;
      default: return w_user_item;
    }
  }
  const Matrix& operator[](MetricKind kind) const { return const_cast<MetricSet&>(*this)[kind]; }

  int dim() const { return static_cast<int>(w_user.rows()); }
};

inline MetricKind same_kind_metric(EntityKind kind) {
  return kind == EntityKind::user ? MetricKind::user : MetricKind::item;
}

namespace detail {

template <class A, class B>
Vector difference(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  Vector d(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) d[i] = a(i) - b(i);
  return d;
}

template <class A, class B>
void check_pair(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, Eigen::Index k) {
  if (a.size() != b.size() || a.size() != k)
    throw ValidationError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                          " vs " + std::to_string(k));
  if (a.hasNaN() || b.hasNaN()) throw ValidationError("NaN in distance input");
}

inline double clamp_quadratic_form(double q) {
  constexpr double kNoise = 1e-12;
  if (q >= 0.0) return q;
  if (q >= -kNoise) return 0.0;
  throw ValidationError("negative quadratic form " + std::to_string(q) + ": metric is not PSD");
}

/// Unchecked (a-b)^T W (a-b) for the hot loss path.
template <class A, class B>
double quad_form(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const Matrix& w) {
  Vector d = difference(a, b);
  return d.dot(w * d);
}

}  // namespace detail

/// ||a - b||^2_W = (a - b)^T W (a - b).
template <class A, class B>
double squared_w_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const Matrix& w) {
  if (w.rows() != w.cols()) throw ValidationError("metric must be square");
  detail::check_pair(a, b, w.rows());
  return detail::clamp_quadratic_form(detail::quad_form(a, b, w));
}

template <class A, class B>
double w_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const Matrix& w) {
  return std::sqrt(squared_w_distance(a, b, w));
}

template <class A, class B>
double squared_euclidean_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  detail::check_pair(a, b, a.size());
  return detail::difference(a, b).squaredNorm();
}

template <class A, class B>
double euclidean_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return std::sqrt(squared_euclidean_distance(a, b));
}

/// Nearest symmetric PSD matrix in Frobenius norm: symmetrize, clip negative
/// eigenvalues at zero, recompose.
inline Matrix project_psd(const Matrix& w) {
  if (w.rows() != w.cols()) throw ValidationError("project_psd: matrix must be square");
  if (!w.allFinite()) throw NumericalError("project_psd: non-finite matrix");
  const Matrix sym = 0.5 * (w + w.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("project_psd: eigendecomposition failed");
  const Vector clipped = solver.eigenvalues().cwiseMax(0.0);
  Matrix out = solver.eigenvectors() * clipped.asDiagonal() * solver.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

inline double min_eigenvalue(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

inline double max_asymmetry(const Matrix& w) { return (w - w.transpose()).cwiseAbs().maxCoeff(); }

// Metric serialization. Binary: 16-byte header (magic "MMLW", k, count,
// reserved) followed by count row-major k*k blocks of float64, little-endian.

inline constexpr std::uint32_t kMetricMagic = 0x574C4D4D;  // "MMLW" in file byte order

inline void write_metrics_binary(std::ostream& out, const std::vector<Matrix>& metrics) {
  const auto k = metrics.empty() ? 0u : static_cast<std::uint32_t>(metrics.front().rows());
  io::write_le<std::uint32_t>(out, kMetricMagic);
  io::write_le<std::uint32_t>(out, k);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(metrics.size()));
  io::write_le<std::uint32_t>(out, 0u);
  for (const auto& w : metrics) {
    if (w.rows() != k || w.cols() != k) throw ValidationError("metrics must share one k x k shape");
    io::write_block(out, w);
  }
}

inline std::vector<Matrix> read_metrics_binary(std::istream& in) {
  if (io::read_le<std::uint32_t>(in) != kMetricMagic) throw ValidationError("not a metric block (bad magic)");
  const auto k = io::read_le<std::uint32_t>(in);
  const auto count = io::read_le<std::uint32_t>(in);
  (void)io::read_le<std::uint32_t>(in);
  std::vector<Matrix> metrics(count, Matrix(k, k));
  for (auto& w : metrics) io::read_block(in, w);
  return metrics;
}

/// Text form: one row per line, space separated, a blank line between matrices.
inline void write_metrics_text(std::ostream& out, const std::vector<Matrix>& metrics) {
  out << std::setprecision(17);
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    if (m) out << '\n';
    const auto& w = metrics[m];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out << (c ? " " : "") << w(r, c);
      out << '\n';
    }
  }
}

inline std::vector<Matrix> read_metrics_text(std::istream& in) {
  std::vector<Matrix> metrics;
  std::vector<std::vector<double>> rows;
  auto flush = [&] {
    if (rows.empty()) return;
    const auto k = rows.size();
    Matrix w(k, k);
    for (std::size_t r = 0; r < k; ++r) {
      if (rows[r].size() != k) throw ValidationError("metric text block is not square");
      for (std::size_t c = 0; c < k; ++c) w(r, c) = rows[r][c];
    }
    metrics.push_back(std::move(w));
    rows.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) throw ValidationError("metric text: non-numeric entry");
    if (row.empty()) flush();
    else rows.push_back(std::move(row));
  }
  flush();
  return metrics;
}

}  // namespace mml
