#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "change_analysis.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "independence.hpp"
#include "linalg.hpp"
#include "scm.hpp"

namespace scalei {

struct RecoveryConfig {
  EquivalenceConfig equivalence;
  // Relative singular-value threshold for every rank decision.
  double rank_tol = 1e-6;
  // Distance-correlation level below which a refined pair counts as independent.
  double independence_threshold = 0.05;
  int independence_samples = 2000;
  // The exact variation search visits all 2^n environment subsets.
  int max_search_nodes = 16;
};

/// Orthonormal basis of span{s^0(x_k) - s^m(x_k)} for one environment.
struct Subspace {
  MatrixXd basis;
  int rank = 0;
  bool degenerate = false;
};

/// One subspace per interventional environment (result[m-1] is environment m).
/// Difference rows are normalized to unit length before the SVD so heavy
/// tails do not swamp the rank decision; the span is unchanged.
inline std::vector<Subspace> difference_subspaces(const std::vector<MatrixXd>& scores, double rank_tol) {
  if (scores.size() < 2) throw DomainError("difference_subspaces needs at least two environments");
  const Eigen::Index k = scores[0].rows();
  const Eigen::Index dim = scores[0].cols();
  double ref = 0.0;
  for (Eigen::Index r = 0; r < k; ++r) ref = std::max(ref, scores[0].row(r).norm());
  const double zero_cut = 1e-12 * std::max(ref, 1e-300);

  std::vector<Subspace> out;
  for (std::size_t m = 1; m < scores.size(); ++m) {
    if (scores[m].rows() != k || scores[m].cols() != dim)
      throw DomainError("score matrices must share shape");
    MatrixXd diff = scores[0] - scores[m];
    Eigen::Index kept = 0;
    for (Eigen::Index r = 0; r < k; ++r) {
      const double nr = diff.row(r).norm();
      if (nr > zero_cut) diff.row(kept++) = diff.row(r) / nr;
    }
    Subspace s;
    if (kept == 0) {
      s.basis = MatrixXd(dim, 0);
      s.degenerate = true;
    } else {
      s.basis = range_basis(diff.topRows(kept).transpose(), rank_tol);
      s.rank = static_cast<int>(s.basis.cols());
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Orthonormal basis (d x n) of the span of the observed samples, i.e. image(T).
inline MatrixXd image_basis(const MatrixXd& x, int n, double rank_tol) {
  MatrixXd b = range_basis(x.transpose(), rank_tol);
  if (b.cols() != n)
    throw DomainError("observations span " + std::to_string(b.cols()) + " dimensions, expected " +
                      std::to_string(n));
  return b;
}

struct VariationMinimum {
  MatrixXd U;          // d x n decoder columns inside image(T)
  ChangeMatrix delta;  // structural change pattern of the columns of U
};

namespace detail {

inline int popcount(unsigned v) {
  int c = 0;
  for (; v; v &= v - 1) ++c;
  return c;
}

// |B^T u| / |u| above this counts as "not orthogonal".
inline constexpr double kOrthogonalityCut = 1e-6;

inline BinaryMatrix structural_pattern(const MatrixXd& cols, const std::vector<MatrixXd>& bases) {
  const int n = static_cast<int>(cols.cols());
  BinaryMatrix p = BinaryMatrix::Zero(n, static_cast<int>(bases.size()));
  for (int i = 0; i < n; ++i) {
    const double un = cols.col(i).norm();
    for (std::size_t m = 0; m < bases.size(); ++m)
      if (bases[m].cols() > 0 && (bases[m].transpose() * cols.col(i)).norm() > kOrthogonalityCut * un)
        p(i, static_cast<int>(m)) = 1;
  }
  return p;
}

}  // namespace detail

/// Finds n independent directions in image(T) whose change pattern has the
/// fewest ones. A direction orthogonal to every environment outside a set S
/// changes at most in S, so the cheapest basis is built greedily over |S| =
/// 1, 2, ...: linear independence is a matroid, hence the greedy basis has
/// minimal total l0. Within one S the directions farthest from the span
/// already chosen are preferred.
inline VariationMinimum minimize_variations(const std::vector<Subspace>& subspaces,
                                            const MatrixXd& image, int n,
                                            const RecoveryConfig& cfg = {}) {
  if (static_cast<int>(subspaces.size()) != n) throw DomainError("need one subspace per node");
  if (image.cols() != n) throw DomainError("image basis must have n columns");
  if (n > cfg.max_search_nodes) throw DomainError("variation search is capped at max_search_nodes");
  std::vector<int> flat;
  for (int m = 0; m < n; ++m)
    if (subspaces[m].degenerate || subspaces[m].rank == 0) flat.push_back(m + 1);
  if (!flat.empty()) throw IdentifiabilityFailure("environments without score changes", flat);

  // Work in the n coordinates of image(T).
  std::vector<MatrixXd> coords;
  for (const auto& s : subspaces) coords.push_back(range_basis(image.transpose() * s.basis, cfg.rank_tol));

  MatrixXd chosen(n, 0);
  const unsigned full = (1u << n) - 1u;
  for (int level = 1; level <= n && chosen.cols() < n; ++level) {
    for (unsigned set = 1; set <= full && chosen.cols() < n; ++set) {
      if (detail::popcount(set) != level) continue;
      int width = 0;
      for (int m = 0; m < n; ++m)
        if (!(set >> m & 1u)) width += static_cast<int>(coords[m].cols());
      MatrixXd others(n, width);
      int c = 0;
      for (int m = 0; m < n; ++m)
        if (!(set >> m & 1u)) {
          others.middleCols(c, coords[m].cols()) = coords[m];
          c += static_cast<int>(coords[m].cols());
        }
      const MatrixXd feasible = complement_basis(others, n, cfg.rank_tol);
      if (feasible.cols() == 0) continue;
      MatrixXd residual = feasible;
      if (chosen.cols() > 0) {
        const MatrixXd q = range_basis(chosen, 1e-12);
        residual -= q * (q.transpose() * feasible);
      }
      Eigen::JacobiSVD<MatrixXd> svd(residual, Eigen::ComputeFullV);
      const auto& sv = svd.singularValues();
      for (int j = 0; j < sv.size() && chosen.cols() < n; ++j) {
        if (sv(j) <= cfg.rank_tol) break;
        VectorXd v = feasible * svd.matrixV().col(j);
        v.normalize();
        chosen.conservativeResize(n, chosen.cols() + 1);
        chosen.col(chosen.cols() - 1) = v;
      }
    }
  }
  if (chosen.cols() < n) throw IdentifiabilityFailure("could not complete a decoder basis", {});

  VariationMinimum out;
  out.U = image * chosen;
  out.delta.delta = detail::structural_pattern(chosen, coords);
  return out;
}

/// Lexicographically smallest column permutation p (K.col(q) = delta.col(p[q]))
/// making delta upper triangular, or nullopt.
inline std::optional<std::vector<int>> triangularize(const ChangeMatrix& delta) {
  const int n = delta.size();
  if (delta.delta.cols() != n) throw DomainError("triangularize needs a square matrix");
  // Column c may sit at position q iff its lowest nonzero row is <= q.
  std::vector<int> low(n, 0);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < n; ++r)
      if (delta.delta(r, c)) low[c] = r;
  std::vector<bool> used(n, false);
  std::vector<int> p;
  auto feasible_rest = [&](int from) {
    std::vector<int> lows;
    for (int c = 0; c < n; ++c)
      if (!used[c]) lows.push_back(low[c]);
    std::sort(lows.begin(), lows.end());
    for (std::size_t t = 0; t < lows.size(); ++t)
      if (lows[t] > from + static_cast<int>(t)) return false;
    return true;
  };
  if (!feasible_rest(0)) return std::nullopt;
  for (int q = 0; q < n; ++q) {
    bool placed = false;
    for (int c = 0; c < n && !placed; ++c) {
      if (used[c] || low[c] > q) continue;
      used[c] = true;
      if (feasible_rest(q + 1)) {
        p.push_back(c);
        placed = true;
      } else {
        used[c] = false;
      }
    }
    if (!placed) return std::nullopt;
  }
  return p;
}

/// Parents of node i are the off-diagonal ones in column i of K.
inline Dag build_dag(const ChangeMatrix& k) {
  const int n = k.size();
  if (k.delta.cols() != n) throw DomainError("K must be square");
  std::vector<NodeSet> pa(n);
  for (int i = 0; i < n; ++i) {
    if (k.delta(i, i) != 1) throw DomainError("K has a zero diagonal entry at " + std::to_string(i + 1));
    for (int j = 0; j < n; ++j) {
      if (k.delta(j, i) && j > i) throw DomainError("K is not upper triangular");
      if (k.delta(j, i) && j != i) pa[i].push_back(j);
    }
  }
  return Dag(std::move(pa));
}

/// Row order (and matching column order) putting delta into unit upper
/// triangular form: repeatedly take a row with a single remaining one as the
/// last unplaced node. Ties go to the smallest row index.
inline std::optional<std::pair<std::vector<int>, std::vector<int>>> peel_sinks(const ChangeMatrix& delta) {
  const int n = delta.size();
  std::vector<bool> row_left(n, true), col_left(n, true);
  std::vector<int> rows(n), cols(n);
  for (int pos = n - 1; pos >= 0; --pos) {
    int pick_row = -1, pick_col = -1;
    for (int r = 0; r < n && pick_row < 0; ++r) {
      if (!row_left[r]) continue;
      int count = 0, where = -1;
      for (int c = 0; c < n; ++c)
        if (col_left[c] && delta.delta(r, c)) {
          ++count;
          where = c;
        }
      if (count == 1) {
        pick_row = r;
        pick_col = where;
      }
    }
    if (pick_row < 0) return std::nullopt;
    row_left[pick_row] = false;
    col_left[pick_col] = false;
    rows[pos] = pick_row;
    cols[pos] = pick_col;
  }
  return std::make_pair(rows, cols);
}

struct DecoderEstimate {
  MatrixXd U;        // d x n
  MatrixXd encoder;  // n x d, U^+
  ChangeMatrix delta;
  std::vector<int> p2;
  ChangeMatrix K;
  Dag dag_hat;
  CausalOrder order;
  // Environment index (1..n) certifying each estimated node.
  std::vector<int> environment_of;
  std::vector<int> subspace_ranks;
};

namespace detail {

// Unit-norm encoder rows with first significant entry positive; U = encoder^+.
inline void canonicalize(DecoderEstimate& d) {
  for (Eigen::Index i = 0; i < d.encoder.rows(); ++i) {
    const double nr = d.encoder.row(i).norm();
    d.encoder.row(i) /= nr;
    for (Eigen::Index j = 0; j < d.encoder.cols(); ++j)
      if (std::abs(d.encoder(i, j)) > 1e-12) {
        if (d.encoder(i, j) < 0.0) d.encoder.row(i) *= -1.0;
        break;
      }
  }
  d.U = pseudo_inverse(d.encoder);
}

}  // namespace detail

/// Score-variation minimization, triangular refinement and DAG construction.
/// `scores[m]` holds s_X^m at the shared observational rows; `image` is an
/// orthonormal basis of image(T).
inline DecoderEstimate soft_recover(const std::vector<MatrixXd>& scores, const MatrixXd& image,
                                    const RecoveryConfig& cfg = {}) {
  const int n = static_cast<int>(scores.size()) - 1;
  if (n < 1) throw DomainError("soft_recover needs at least one interventional environment");
  const auto subspaces = difference_subspaces(scores, cfg.rank_tol);
  auto minimum = minimize_variations(subspaces, image, n, cfg);

  DecoderEstimate est;
  for (const auto& s : subspaces) est.subspace_ranks.push_back(s.rank);

  // A minimal pattern is a row permutation of the true one, whose column
  // counts equal the subspace ranks.
  std::vector<int> offending;
  for (int m = 0; m < n; ++m)
    if (minimum.delta.delta.col(m).sum() != subspaces[m].rank) offending.push_back(m + 1);
  if (!offending.empty())
    throw IdentifiabilityFailure("change pattern disagrees with score-difference ranks", offending);

  const auto peeled = peel_sinks(minimum.delta);
  if (!peeled) throw IdentifiabilityFailure("change pattern cannot be made triangular", {});
  const auto& row_order = peeled->first;

  MatrixXd u(image.rows(), n);
  for (int k = 0; k < n; ++k) u.col(k) = minimum.U.col(row_order[k]);
  est.encoder = pseudo_inverse(u);
  detail::canonicalize(est);

  est.delta = delta_x(est.U.transpose(), scores, cfg.equivalence);
  const auto p2 = triangularize(est.delta);
  if (!p2) throw IdentifiabilityFailure("no column permutation makes the change matrix triangular", {});
  est.p2 = *p2;
  est.K.delta = BinaryMatrix(n, n);
  for (int q = 0; q < n; ++q) est.K.delta.col(q) = est.delta.delta.col(est.p2[q]);
  try {
    est.dag_hat = build_dag(est.K);
  } catch (const DomainError& e) {
    throw IdentifiabilityFailure(e.what(), {});
  }
  est.order = CausalOrder::identity(n);
  for (int q = 0; q < n; ++q) est.environment_of.push_back(est.p2[q] + 1);
  return est;
}

struct UnmixingCoefficient {
  int node = 0;
  int surrounding = 0;
  double beta = 0.0;
  double dependence = 0.0;
};

namespace detail {

// Evenly strided subsample of at most `count` entries.
inline VectorXd strided(const VectorXd& v, int count) {
  if (v.size() <= count) return v;
  VectorXd out(count);
  const double step = static_cast<double>(v.size()) / count;
  for (int i = 0; i < count; ++i) out(i) = v(static_cast<Eigen::Index>(i * step));
  return out;
}

}  // namespace detail

struct HardRefinement {
  DecoderEstimate decoder;
  std::vector<UnmixingCoefficient> coefficients;
};

namespace detail {

// Monomials g(z) in {1, z_j, z_j z_k} paired with every score coordinate l
// give Stein control variates s_l(z) g(z) + d g / d z_l, each of mean zero
// under the distribution whose score is s.
inline MatrixXd stein_control_variates(const MatrixXd& z, const MatrixXd& s) {
  const Eigen::Index k = z.rows();
  const int n = static_cast<int>(z.cols());
  const int monomials = 1 + n + n * (n + 1) / 2;
  MatrixXd cv(k, static_cast<Eigen::Index>(monomials) * n);
  Eigen::Index col = 0;
  for (int l = 0; l < n; ++l) {
    cv.col(col++) = s.col(l);
    for (int j = 0; j < n; ++j) {
      cv.col(col) = s.col(l).cwiseProduct(z.col(j));
      if (j == l) cv.col(col).array() += 1.0;
      ++col;
    }
    for (int j = 0; j < n; ++j)
      for (int t = j; t < n; ++t) {
        cv.col(col) = s.col(l).cwiseProduct(z.col(j)).cwiseProduct(z.col(t));
        if (l == j) cv.col(col) += z.col(t);
        if (l == t) cv.col(col) += z.col(j);
        ++col;
      }
  }
  return cv;
}

}  // namespace detail

/// Unmixes surrounded nodes with hard-intervention data. In the environment
/// that intervenes on estimated node i, the hard-intervened latent is
/// independent of the nodes surrounding it, so the part of Zhat_i explained
/// by {Zhat_j : j in sur(i)} is removed by a joint least-squares fit there.
/// When the interventional scores at those samples are supplied, the fitted
/// cross moments are corrected with Stein control variates, which removes
/// most of the sampling noise of the fit. Each pair is then certified with
/// distance correlation.
///
/// `x_by_env[m]` holds the samples of environment m, `own_scores[m]` (may be
/// empty) the observed scores of environment m at those samples, and
/// `shared_scores` the scores used to build `decoder.delta`.
inline HardRefinement hard_refine(const DecoderEstimate& decoder, const std::vector<MatrixXd>& x_by_env,
                                  const std::vector<MatrixXd>& own_scores,
                                  const std::vector<MatrixXd>& shared_scores, const RecoveryConfig& cfg = {}) {
  const int n = decoder.dag_hat.size();
  if (static_cast<int>(x_by_env.size()) != n + 1) throw DomainError("need samples for all n+1 environments");
  const bool use_cv = !own_scores.empty();
  if (use_cv && own_scores.size() != x_by_env.size()) throw DomainError("need scores for all n+1 environments");
  const auto sur = surround_map(decoder.dag_hat);
  HardRefinement out;
  out.decoder = decoder;
  MatrixXd& enc = out.decoder.encoder;

  for (int i = n - 1; i >= 0; --i) {
    const auto& s = sur.sur[i];
    if (s.empty()) continue;
    const int m = decoder.environment_of[i];
    const MatrixXd zhat = x_by_env[m] * enc.transpose();
    const Eigen::Index k = zhat.rows();
    const auto width = static_cast<Eigen::Index>(s.size());
    MatrixXd zs(k, width);
    for (Eigen::Index t = 0; t < width; ++t) zs.col(t) = zhat.col(s[t]);
    const VectorXd mean_s = zs.colwise().mean();
    const MatrixXd centred = zs.rowwise() - mean_s.transpose();
    MatrixXd design(k, width + 1);
    design.leftCols(width) = centred;
    design.col(width).setOnes();
    VectorXd beta = design.colPivHouseholderQr().solve(zhat.col(i)).head(width);

    if (use_cv) {
      // Residual cross moments are exactly zero in-sample; their control-
      // variate estimate measures the part that is sampling noise.
      const VectorXd resid = zhat.col(i) - centred * beta;
      const VectorXd r0 = resid.array() - resid.mean();
      MatrixXd products(k, width);
      for (Eigen::Index t = 0; t < width; ++t) products.col(t) = r0.cwiseProduct(centred.col(t));
      // Scores of the current Zhat: U_current^T s_X, with U_current = enc^+.
      const MatrixXd u_now = pseudo_inverse(enc);
      const MatrixXd score_hat = own_scores[m] * u_now;
      MatrixXd cv = detail::stein_control_variates(zhat, score_hat);
      const VectorXd cv_mean = cv.colwise().mean();
      cv.rowwise() -= cv_mean.transpose();
      const MatrixXd prod_c = products.rowwise() - products.colwise().mean();
      const MatrixXd gamma = cv.colPivHouseholderQr().solve(prod_c);
      const VectorXd adjusted = products.colwise().mean().transpose() - gamma.transpose() * cv_mean;
      const MatrixXd cov_s = centred.transpose() * centred / static_cast<double>(k);
      beta += cov_s.ldlt().solve(adjusted);
    }

    for (Eigen::Index t = 0; t < width; ++t) {
      enc.row(i) -= beta(t) * enc.row(s[t]);
      out.coefficients.push_back({i, s[t], beta(t), 0.0});
    }
  }
  detail::canonicalize(out.decoder);

  for (auto& c : out.coefficients) {
    const MatrixXd zhat = x_by_env[decoder.environment_of[c.node]] * enc.transpose();
    c.dependence = distance_correlation(detail::strided(zhat.col(c.node), cfg.independence_samples),
                                        detail::strided(zhat.col(c.surrounding), cfg.independence_samples));
    if (c.dependence > cfg.independence_threshold)
      throw RefinementFailure("surrounded pair remains dependent after unmixing", c.node, c.surrounding);
  }

  const ChangeMatrix after = delta_x(out.decoder.U.transpose(), shared_scores, cfg.equivalence);
  if (!(after == decoder.delta)) throw RefinementFailure("unmixing changed the change matrix", -1, -1);
  return out;
}

/// Zhat = X (U^+)^T row-wise; rows must lie in image(U).
inline MatrixXd estimate_latents(const DecoderEstimate& decoder, const MatrixXd& x) {
  if (x.cols() != decoder.U.rows()) throw DomainError("observation width does not match decoder");
  MatrixXd z = x * decoder.encoder.transpose();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double res = (decoder.U * z.row(r).transpose() - x.row(r).transpose()).norm();
    if (res > 1e-8 * std::max(1.0, x.row(r).norm())) throw DomainError("observation lies off image(U)");
  }
  return z;
}

/// Row permutation p with every |A(p[i], i)| > 0, maximizing sum log|A(p[i], i)|.
/// (PA)(i, :) = A(p[i], :).
inline std::vector<int> p1_permutation(const MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw DomainError("p1_permutation needs a square matrix");
  if (n == 0) return {};
  if (std::abs(a.determinant()) <= 1e-12) throw DomainError("matrix is singular");

  // Hungarian algorithm on cost(i, j) = -log|a(j, i)| assigning a row to each column.
  const double big = 1e6;
  auto cost = [&](int col, int row) {
    const double v = std::abs(a(row, col));
    return v > 0.0 ? -std::log(v) : big;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> p(n);
  for (int j = 1; j <= n; ++j) p[match[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i)
    if (a(p[i], i) == 0.0) throw DomainError("no permutation with a nonzero diagonal");
  return p;
}

/// Ground-truth diagnostics of a decoder.
struct RecoveryReport {
  DecoderEstimate decoder;
  std::optional<MatrixXd> h_matrix;  // H(U) = (T^+ U)^T
  std::vector<int> p1;
  std::vector<int> subspace_ranks;
  bool hard_refined = false;
  std::vector<UnmixingCoefficient> unmixing_coeffs;

  // Truth-only fields.
  CausalOrder matched_order;  // matched_order.pi[k] = true node behind estimated node k
  MatrixXd C, B;              // P1 U^+ T = C + B (true-node labels)
  bool h_bar_mask_ok = false;      // I <= 1(Hbar) <= I + Sigma
  bool h_bar_inv_mask_ok = false;  // I <= 1(Hbar^-T) <= I + Sigma^T
  bool dag_matches = false;
  bool k_matches_truth = false;
  double max_disallowed_mixing = 0.0;  // max |B_ij| / |C_ii| over j not in sur(i)
};

namespace detail {

inline bool mask_within(const MatrixXd& m, const BinaryMatrix& allowed, double rel) {
  const int n = static_cast<int>(m.rows());
  for (int i = 0; i < n; ++i) {
    const double diag = std::abs(m(i, i));
    if (diag == 0.0) return false;
    for (int j = 0; j < n; ++j)
      if (i != j && !allowed(i, j) && std::abs(m(i, j)) > rel * diag) return false;
  }
  return true;
}

}  // namespace detail

inline RecoveryReport analyze_against_truth(const DecoderEstimate& decoder, const MixingMap& truth,
                                            const Dag& dag) {
  const int n = dag.size();
  if (decoder.U.cols() != n || truth.latent_dim() != n) throw DomainError("decoder/truth size mismatch");
  RecoveryReport rep;
  rep.decoder = decoder;
  rep.subspace_ranks = decoder.subspace_ranks;
  const MatrixXd h = (truth.pinv * decoder.U).transpose();
  if (std::abs(h.determinant()) <= 1e-12) throw DomainError("H(U) is singular: decoder outside the candidate set");
  rep.h_matrix = h;
  rep.p1 = p1_permutation(h);

  MatrixXd h_bar(n, n);
  for (int i = 0; i < n; ++i) h_bar.row(i) = h.row(rep.p1[i]);
  const MatrixXd mix_map = decoder.encoder * truth.T;  // Zhat = mix_map * Z
  MatrixXd cb(n, n);
  for (int i = 0; i < n; ++i) cb.row(i) = mix_map.row(rep.p1[i]);
  rep.C = cb.diagonal().asDiagonal();
  rep.B = cb - rep.C;

  const BinaryMatrix sigma = sigma_mask(dag);
  rep.h_bar_mask_ok = detail::mask_within(h_bar, sigma, 1e-6);
  rep.h_bar_inv_mask_ok = detail::mask_within(cb, sigma.transpose(), 1e-6);

  const auto sur = surround_map(dag);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j || std::binary_search(sur.sur[i].begin(), sur.sur[i].end(), j)) continue;
      rep.max_disallowed_mixing = std::max(rep.max_disallowed_mixing, std::abs(rep.B(i, j)) / std::abs(rep.C(i, i)));
    }

  rep.matched_order.pi.assign(n, 0);
  for (int i = 0; i < n; ++i) rep.matched_order.pi[rep.p1[i]] = i;
  rep.dag_matches = dag_equal_up_to_order(dag, decoder.dag_hat, rep.matched_order) &&
                    rep.matched_order.is_valid_for(dag);
  rep.k_matches_truth = true;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const auto pb = dag.closed_parents(rep.matched_order.pi[b]);
      const bool expect = std::binary_search(pb.begin(), pb.end(), rep.matched_order.pi[a]);
      if ((decoder.K.delta(a, b) == 1) != expect) rep.k_matches_truth = false;
    }
  return rep;
}

}  // namespace scalei
