#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "random.hpp"
#include "scm.hpp"

namespace scalei {

enum class Verdict { pass, fail, not_applicable };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::not_applicable: return "n/a";
  }
  return "?";
}

/// Atomic coverage: targets[0] empty and every node targeted alone exactly once.
inline bool audit_coverage(const EnvironmentSet& envs, int n) {
  if (envs.count() != n + 1 || !envs.targets[0].empty()) return false;
  std::vector<int> hits(n, 0);
  for (int m = 1; m < envs.count(); ++m) {
    if (envs.targets[m].size() != 1) return false;
    const int t = envs.targets[m][0];
    if (t < 0 || t >= n) return false;
    ++hits[t];
  }
  return std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
}

struct RegularityResult {
  Verdict verdict = Verdict::not_applicable;
  double fraction = 0.0;
  // First probe point where the ratio derivative vanished (empty if none).
  VectorXd witness;
};

inline constexpr double kAuditFdStep = 1e-5;

/// Fraction of observational probe points where d/dz_k log(q/p)(z_i | z_Pa(i))
/// is nonzero (> 1e-8), minimized over k in Pa(i). Central differences.
inline RegularityResult audit_regularity(const Scm& scm, int node, int probes, std::uint64_t seed,
                                         double pass_fraction = 0.99) {
  RegularityResult res;
  const auto& pa = scm.dag.parents(node);
  if (pa.empty()) return res;
  const auto envs = EnvironmentSet::atomic(scm.size());
  const MatrixXd z = sample_latent(scm, envs, 0, probes, seed);
  auto log_ratio = [&](const VectorXd& p) {
    return scm.log_conditional(node, p, true) - scm.log_conditional(node, p, false);
  };
  double worst = 1.0;
  for (int k : pa) {
    int nonzero = 0;
    for (int r = 0; r < probes; ++r) {
      VectorXd p = z.row(r).transpose();
      VectorXd lo = p, hi = p;
      lo(k) -= kAuditFdStep;
      hi(k) += kAuditFdStep;
      const double d = (log_ratio(hi) - log_ratio(lo)) / (2.0 * kAuditFdStep);
      if (std::abs(d) > 1e-8) {
        ++nonzero;
      } else if (res.witness.size() == 0) {
        res.witness = p;
      }
    }
    worst = std::min(worst, static_cast<double>(nonzero) / probes);
  }
  res.fraction = worst;
  res.verdict = worst >= pass_fraction ? Verdict::pass : Verdict::fail;
  return res;
}

struct VMatrixResult {
  Verdict verdict = Verdict::not_applicable;
  int rank = 0;
  int required = 0;
};

/// Rank of V = [[u_p(phi_t)^T, -1]; [u_q(phi_t)^T, -1]] over w standard normal
/// probes phi_t; passes iff rank = |Pa(i)| + 1. Additive models only.
inline VMatrixResult audit_vmatrix(const Scm& scm, int node, int w, std::uint64_t seed,
                                   double rel_tol = 1e-8) {
  VMatrixResult res;
  const int arity = static_cast<int>(scm.dag.parents(node).size());
  res.required = arity + 1;
  if (scm.coupling != Coupling::additive) return res;
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd v(2 * w, arity + 1);
  const auto& mp = scm.obs_mech[node];
  const auto& mq = scm.int_mech[node];
  for (int t = 0; t < w; ++t) {
    VectorXd phi(arity);
    for (int k = 0; k < arity; ++k) phi(k) = nd(rng);
    const VectorXd up = mp.kind == MechanismKind::constant ? VectorXd::Zero(arity) : mp.gradient(phi);
    const VectorXd uq = mq.kind == MechanismKind::constant ? VectorXd::Zero(arity) : mq.gradient(phi);
    v.row(2 * t).head(arity) = up.transpose();
    v(2 * t, arity) = -1.0;
    v.row(2 * t + 1).head(arity) = uq.transpose();
    v(2 * t + 1, arity) = -1.0;
  }
  res.rank = numerical_rank(v, rel_tol);
  res.verdict = res.rank == res.required ? Verdict::pass : Verdict::fail;
  return res;
}

struct NnRankResult {
  Verdict verdict = Verdict::not_applicable;
  int rank = 0;
  int required = 0;
};

/// max{rank W^p, rank W^q} = |Pa(i)| for two-layer network mechanisms.
inline NnRankResult audit_nn_rank(const Scm& scm, int node, double rel_tol = 1e-8) {
  NnRankResult res;
  const int arity = static_cast<int>(scm.dag.parents(node).size());
  res.required = arity;
  if (arity == 0) return res;
  const auto& mp = scm.obs_mech[node];
  const auto& mq = scm.int_mech[node];
  const bool p_nn = mp.kind == MechanismKind::two_layer_nn;
  const bool q_nn = mq.kind == MechanismKind::two_layer_nn;
  if (!p_nn && !q_nn) return res;
  if (p_nn) res.rank = std::max(res.rank, numerical_rank(mp.layer, rel_tol));
  if (q_nn) res.rank = std::max(res.rank, numerical_rank(mq.layer, rel_tol));
  res.verdict = res.rank == arity ? Verdict::pass : Verdict::fail;
  return res;
}

struct NodeAudit {
  RegularityResult regularity;
  VMatrixResult vmatrix;
  NnRankResult nn;
  Verdict verdict = Verdict::not_applicable;
};

struct AuditReport {
  bool coverage_ok = false;
  std::vector<NodeAudit> nodes;

  bool all_vmatrix_pass() const {
    return std::all_of(nodes.begin(), nodes.end(),
                       [](const NodeAudit& a) { return a.vmatrix.verdict != Verdict::fail; });
  }
};

/// Per-node audit; a node fails if any applicable check fails.
inline AuditReport audit_model(const Scm& scm, const EnvironmentSet& envs, std::uint64_t seed,
                               int regularity_probes = 1000) {
  AuditReport rep;
  const int n = scm.size();
  rep.coverage_ok = audit_coverage(envs, n);
  for (int i = 0; i < n; ++i) {
    NodeAudit a;
    const int arity = static_cast<int>(scm.dag.parents(i).size());
    a.regularity = audit_regularity(scm, i, regularity_probes, derive_seed(seed, {stream::audit, 1, std::uint64_t(i)}));
    if (arity > 0)
      a.vmatrix = audit_vmatrix(scm, i, 4 * (arity + 1), derive_seed(seed, {stream::audit, 2, std::uint64_t(i)}));
    a.nn = audit_nn_rank(scm, i);
    const Verdict checks[] = {a.regularity.verdict, a.vmatrix.verdict, a.nn.verdict};
    for (auto v : checks) {
      if (v == Verdict::fail) a.verdict = Verdict::fail;
      else if (v == Verdict::pass && a.verdict == Verdict::not_applicable) a.verdict = Verdict::pass;
    }
    rep.nodes.push_back(std::move(a));
  }
  return rep;
}

}  // namespace scalei
