#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "graph.hpp"
#include "independence.hpp"
#include "linalg.hpp"

namespace scalei {

inline constexpr double kCorrelationPass = 0.99;
inline constexpr double kResidualPass = 1e-2;

struct ConsistencyScore {
  CausalOrder matched_order;     // matched_order.pi[k]: true node matched to Zhat column k
  std::vector<double> per_node_corr;  // indexed by true node
  double min_corr = 0.0;
  double mixing_residual = 0.0;
  MatrixXd M;                    // least-squares map: Z -> P^T Zhat (true-node rows)
  bool dag_exact = false;
  int shd = 0;

  bool passes() const { return min_corr >= kCorrelationPass && mixing_residual <= kResidualPass; }
};

/// Structural Hamming distance: a reversed edge costs 1, a missing or extra edge 1.
inline int shd(const Dag& g1, const Dag& g2) {
  if (g1.size() != g2.size()) throw StructuralError("shd needs graphs of equal size");
  int d = 0;
  for (int a = 0; a < g1.size(); ++a)
    for (int b = a + 1; b < g1.size(); ++b) {
      const int s1 = g1.has_edge(a, b) ? 1 : g1.has_edge(b, a) ? 2 : 0;
      const int s2 = g2.has_edge(a, b) ? 1 : g2.has_edge(b, a) ? 2 : 0;
      if (s1 != s2) ++d;
    }
  return d;
}

namespace detail {

inline MatrixXd abs_correlations(const MatrixXd& z, const MatrixXd& zhat) {
  const int n = static_cast<int>(z.cols());
  MatrixXd c(n, n);  // c(k, i) = |corr(zhat_k, z_i)|
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) c(k, i) = std::abs(pearson(zhat.col(k), z.col(i)));
  return c;
}

inline ConsistencyScore consistency(const MatrixXd& z, const MatrixXd& zhat, const Dag& dag,
                                    const std::vector<NodeSet>* exempt) {
  const int n = static_cast<int>(z.cols());
  if (zhat.cols() != n || zhat.rows() != z.rows() || dag.size() != n)
    throw DomainError("consistency: shape mismatch");
  if (z.rows() < n + 1) throw DomainError("consistency needs at least n+1 samples");
  for (int i = 0; i < n; ++i) {
    const double sz = (z.col(i).array() - z.col(i).mean()).abs().maxCoeff();
    const double sh = (zhat.col(i).array() - zhat.col(i).mean()).abs().maxCoeff();
    if (sz == 0.0 || sh == 0.0) throw DomainError("consistency: constant column");
  }
  const MatrixXd corr = abs_correlations(z, zhat);

  ConsistencyScore out;
  out.min_corr = -1.0;
  std::vector<CausalOrder> candidates;
  if (n <= kDefaultOrderEnumerationCap) {
    candidates = valid_orders(dag);
  } else {
    candidates.push_back(CausalOrder{*dag.topological_order()});
  }
  for (const auto& o : candidates) {
    double mn = 1.0;
    for (int k = 0; k < n; ++k) mn = std::min(mn, corr(k, o.pi[k]));
    if (mn > out.min_corr) {
      out.min_corr = mn;
      out.matched_order = o;
    }
  }
  out.per_node_corr.assign(n, 0.0);
  for (int k = 0; k < n; ++k) out.per_node_corr[out.matched_order.pi[k]] = corr(k, out.matched_order.pi[k]);

  // Least squares with intercept: P^T Zhat ~ Z M^T + 1 c^T.
  MatrixXd target(z.rows(), n);
  for (int k = 0; k < n; ++k) target.col(out.matched_order.pi[k]) = zhat.col(k);
  MatrixXd design(z.rows(), n + 1);
  design.leftCols(n) = z;
  design.col(n).setOnes();
  const MatrixXd coef = design.colPivHouseholderQr().solve(target);
  out.M = coef.topRows(n).transpose();
  out.mixing_residual = 0.0;
  for (int i = 0; i < n; ++i) {
    const double diag = std::abs(out.M(i, i));
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (exempt && std::binary_search((*exempt)[i].begin(), (*exempt)[i].end(), j)) continue;
      const double r = diag > 0.0 ? std::abs(out.M(i, j)) / diag : std::numeric_limits<double>::infinity();
      out.mixing_residual = std::max(out.mixing_residual, r);
    }
  }
  return out;
}

}  // namespace detail

/// Matches Zhat columns to true nodes over valid causal orders (maximizing
/// the smallest |corr|) and measures every off-diagonal entry of the fitted
/// linear map Z -> P^T Zhat relative to its row's diagonal.
inline ConsistencyScore scaling_consistency(const MatrixXd& z, const MatrixXd& zhat, const Dag& dag) {
  return detail::consistency(z, zhat, dag, nullptr);
}

/// As scaling_consistency, but entries (i, j) with j in sur(i) are allowed.
inline ConsistencyScore mixing_consistency(const MatrixXd& z, const MatrixXd& zhat, const Dag& dag,
                                           const SurroundMap& surround) {
  return detail::consistency(z, zhat, dag, &surround.sur);
}

}  // namespace scalei
