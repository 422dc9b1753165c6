#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "graph.hpp"
#include "linalg.hpp"
#include "scm.hpp"

namespace scalei {

/// Thresholds of the almost-sure-zero test.
struct EquivalenceConfig {
  double tol = 1e-6;
  double quantile = 0.99;
  int min_samples = 1000;

  void validate() const {
    if (!(tol >= 0.0)) throw DomainError("equivalence tol must be nonnegative");
    if (!(quantile > 0.0 && quantile <= 1.0)) throw DomainError("quantile must lie in (0, 1]");
    if (min_samples < 1) throw DomainError("min_samples must be positive");
  }
};

/// Binary n x n matrix: rows are score coordinates, columns are the
/// interventional environments 1..n (column c is environment c+1).
struct ChangeMatrix {
  BinaryMatrix delta;

  int size() const { return static_cast<int>(delta.rows()); }
  bool operator==(const ChangeMatrix& o) const {
    return delta.rows() == o.delta.rows() && delta.cols() == o.delta.cols() && delta == o.delta;
  }

  /// One row per line of '0'/'1' characters.
  std::vector<std::string> rows() const {
    std::vector<std::string> out;
    for (int i = 0; i < delta.rows(); ++i) {
      std::string s;
      for (int j = 0; j < delta.cols(); ++j) s += delta(i, j) ? '1' : '0';
      out.push_back(s);
    }
    return out;
  }
};

inline int l0(const ChangeMatrix& d) { return d.delta.sum(); }

/// Declares `values` almost surely zero when the `quantile` of |values|,
/// divided by `scale`, is at most `tol`.
inline bool as_equal(std::span<const double> values, double scale, const EquivalenceConfig& cfg) {
  cfg.validate();
  if (values.empty()) throw DomainError("as_equal needs at least one value");
  if (!(scale > 0.0)) throw DomainError("as_equal needs a positive scale");
  if (static_cast<int>(values.size()) < cfg.min_samples)
    throw DomainError("as_equal needs at least " + std::to_string(cfg.min_samples) + " values");
  std::vector<double> mag(values.size());
  std::transform(values.begin(), values.end(), mag.begin(), [](double v) { return std::abs(v); });
  const auto rank = static_cast<std::size_t>(
      std::ceil(cfg.quantile * static_cast<double>(mag.size())) - 1.0);
  const auto idx = std::min(rank, mag.size() - 1);
  std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(idx), mag.end());
  return mag[idx] / scale <= cfg.tol;
}

namespace detail {
inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}
}  // namespace detail

/// Delta(A)_{i,m} = 1 unless [A (s^0 - s^m)]_i is almost surely zero over the
/// shared sample rows. `scores[0]` is observational, `scores[m]` environment m;
/// all are K x dim and evaluated at the same rows. A is rows x dim.
inline ChangeMatrix delta_x(const MatrixXd& a, const std::vector<MatrixXd>& scores,
                            const EquivalenceConfig& cfg = {}) {
  if (scores.size() < 2) throw DomainError("delta_x needs observational and interventional scores");
  const Eigen::Index k = scores[0].rows();
  const Eigen::Index dim = scores[0].cols();
  if (a.cols() != dim) throw DomainError("transform width does not match score dimension");
  for (const auto& s : scores)
    if (s.rows() != k || s.cols() != dim) throw DomainError("score matrices must share shape");

  const int envs = static_cast<int>(scores.size()) - 1;
  ChangeMatrix out{BinaryMatrix::Zero(a.rows(), envs)};
  std::vector<double> vals(static_cast<std::size_t>(k));
  for (int m = 1; m <= envs; ++m) {
    const MatrixXd diff = scores[0] - scores[static_cast<std::size_t>(m)];
    std::vector<double> norms(static_cast<std::size_t>(k));
    for (Eigen::Index r = 0; r < k; ++r) norms[static_cast<std::size_t>(r)] = diff.row(r).norm();
    double diff_scale = detail::median(norms);
    if (diff_scale <= 0.0) diff_scale = *std::max_element(norms.begin(), norms.end());
    if (diff_scale <= 0.0) continue;  // environment identical to the observational one
    const MatrixXd proj = diff * a.transpose();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double row_norm = a.row(i).norm();
      if (row_norm == 0.0) continue;
      for (Eigen::Index r = 0; r < k; ++r) vals[static_cast<std::size_t>(r)] = proj(r, i);
      out.delta(i, m - 1) = as_equal(vals, row_norm * diff_scale, cfg) ? 0 : 1;
    }
  }
  return out;
}

/// Analytic change matrix: entry (i, m) = 1 iff i is in closed_parents of
/// the target of environment m.
inline ChangeMatrix true_delta(const Dag& dag, const EnvironmentSet& envs) {
  const int n = dag.size();
  ChangeMatrix out{BinaryMatrix::Zero(n, envs.count() - 1)};
  for (int m = 1; m < envs.count(); ++m) {
    const auto t = envs.target(m);
    if (!t) throw DomainError("interventional environment without a target");
    for (int i : dag.closed_parents(*t)) out.delta(i, m - 1) = 1;
  }
  return out;
}

}  // namespace scalei
