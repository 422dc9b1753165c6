#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "graph.hpp"
#include "linalg.hpp"
#include "random.hpp"

namespace scalei {

enum class MechanismKind { linear, quadratic, two_layer_nn, generalized_linear, constant };
enum class Coupling { additive, multiplicative };
enum class InterventionType { soft, hard };
enum class NoiseFamily { gaussian, logistic };

/// Which parts of a node's law a soft intervention replaces.
enum class SoftVariant { both, mechanism_only, noise_only };

inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

inline double softplus(double t) {
  return t > 30.0 ? t : std::log1p(std::exp(t));
}

/// A causal mechanism f(phi) over the parent values phi.
///
///   linear:             w . phi + b
///   quadratic:          phi^T A phi               (A symmetric)
///   two_layer_nn:       nu^T sigmoid(W phi) + nu0
///   generalized_linear: a * tanh(w . phi) + b     (a stored in `scale`)
///   constant:           c
struct Mechanism {
  MechanismKind kind = MechanismKind::constant;
  VectorXd weights;
  double bias = 0.0;
  double scale = 1.0;
  MatrixXd quad;
  MatrixXd layer;    // W, hidden x arity
  VectorXd output;   // nu
  double output_bias = 0.0;
  double constant = 0.0;
  int arity = 0;

  static Mechanism make_constant(double c) {
    Mechanism m;
    m.kind = MechanismKind::constant;
    m.constant = c;
    return m;
  }
  static Mechanism make_linear(VectorXd w, double b = 0.0) {
    Mechanism m;
    m.kind = MechanismKind::linear;
    m.arity = static_cast<int>(w.size());
    m.weights = std::move(w);
    m.bias = b;
    return m;
  }
  static Mechanism make_quadratic(MatrixXd a) {
    if (a.rows() != a.cols()) throw DomainError("quadratic mechanism needs a square matrix");
    Mechanism m;
    m.kind = MechanismKind::quadratic;
    m.arity = static_cast<int>(a.rows());
    m.quad = 0.5 * (a + a.transpose());
    return m;
  }
  static Mechanism make_two_layer_nn(MatrixXd w, VectorXd nu, double nu0) {
    if (w.rows() != nu.size()) throw DomainError("hidden width mismatch in two-layer network");
    Mechanism m;
    m.kind = MechanismKind::two_layer_nn;
    m.arity = static_cast<int>(w.cols());
    m.layer = std::move(w);
    m.output = std::move(nu);
    m.output_bias = nu0;
    return m;
  }
  static Mechanism make_generalized_linear(VectorXd w, double amplitude, double b = 0.0) {
    Mechanism m;
    m.kind = MechanismKind::generalized_linear;
    m.arity = static_cast<int>(w.size());
    m.weights = std::move(w);
    m.scale = amplitude;
    m.bias = b;
    return m;
  }

  double value(const VectorXd& phi) const {
    switch (kind) {
      case MechanismKind::constant: return constant;
      case MechanismKind::linear: return weights.dot(phi) + bias;
      case MechanismKind::quadratic: return phi.dot(quad * phi);
      case MechanismKind::two_layer_nn: {
        VectorXd h = layer * phi;
        double s = output_bias;
        for (int j = 0; j < h.size(); ++j) s += output(j) * sigmoid(h(j));
        return s;
      }
      case MechanismKind::generalized_linear: return scale * std::tanh(weights.dot(phi)) + bias;
    }
    return 0.0;
  }

  /// Gradient with respect to phi (length = arity; empty for constants).
  VectorXd gradient(const VectorXd& phi) const {
    switch (kind) {
      case MechanismKind::constant: return VectorXd::Zero(phi.size());
      case MechanismKind::linear: return weights;
      case MechanismKind::quadratic: return 2.0 * (quad * phi);
      case MechanismKind::two_layer_nn: {
        VectorXd h = layer * phi;
        VectorXd g(h.size());
        for (int j = 0; j < h.size(); ++j) {
          const double s = sigmoid(h(j));
          g(j) = output(j) * s * (1.0 - s);
        }
        return layer.transpose() * g;
      }
      case MechanismKind::generalized_linear: {
        const double t = std::tanh(weights.dot(phi));
        return scale * (1.0 - t * t) * weights;
      }
    }
    return {};
  }

  /// Multiplies the output map by `s` (keeps the kind).
  void rescale(double s) {
    switch (kind) {
      case MechanismKind::constant: constant *= s; break;
      case MechanismKind::linear: weights *= s; bias *= s; break;
      case MechanismKind::quadratic: quad *= s; break;
      case MechanismKind::two_layer_nn: output *= s; output_bias *= s; break;
      case MechanismKind::generalized_linear: scale *= s; bias *= s; break;
    }
  }

  bool operator==(const Mechanism& o) const {
    return kind == o.kind && arity == o.arity && weights == o.weights && bias == o.bias &&
           scale == o.scale && quad == o.quad && layer == o.layer && output == o.output &&
           output_bias == o.output_bias && constant == o.constant;
  }
};

/// Zero-location noise law with analytic, strictly positive density.
struct NoiseLaw {
  NoiseFamily family = NoiseFamily::gaussian;
  double scale = 1.0;

  double log_pdf(double u) const {
    const double t = u / scale;
    if (family == NoiseFamily::gaussian)
      return -0.5 * t * t - std::log(scale) - 0.5 * std::log(2.0 * M_PI);
    // logistic: e^{-t} / (s (1 + e^{-t})^2), written symmetric in t.
    const double a = std::abs(t);
    return -a - std::log(scale) - 2.0 * std::log1p(std::exp(-a));
  }

  /// d/du log density.
  double score(double u) const {
    if (family == NoiseFamily::gaussian) return -u / (scale * scale);
    return -std::tanh(u / (2.0 * scale)) / scale;
  }

  double sample(Rng& rng) const {
    if (family == NoiseFamily::gaussian) {
      std::normal_distribution<double> nd(0.0, scale);
      return nd(rng);
    }
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    double p = ud(rng);
    while (p <= 0.0 || p >= 1.0) p = ud(rng);
    return scale * std::log(p / (1.0 - p));
  }

  bool operator==(const NoiseLaw&) const = default;
};

inline constexpr double kMultiplicativeFloor = 0.1;

/// Latent structural causal model with one observational and one
/// interventional law per node.
struct Scm {
  Dag dag;
  Coupling coupling = Coupling::additive;
  InterventionType intervention_type = InterventionType::soft;
  std::vector<Mechanism> obs_mech, int_mech;
  std::vector<NoiseLaw> obs_noise, int_noise;

  int size() const { return dag.size(); }

  /// Throws DomainError when an invariant of the model is broken.
  void validate() const {
    const int n = size();
    if (static_cast<int>(obs_mech.size()) != n || static_cast<int>(int_mech.size()) != n ||
        static_cast<int>(obs_noise.size()) != n || static_cast<int>(int_noise.size()) != n)
      throw DomainError("per-node parameter lists must have one entry per node");
    for (int i = 0; i < n; ++i) {
      const int k = static_cast<int>(dag.parents(i).size());
      for (const Mechanism* m : {&obs_mech[i], &int_mech[i]})
        if (m->kind != MechanismKind::constant && m->arity != k)
          throw DomainError("mechanism arity does not match |Pa(" + std::to_string(i + 1) + ")|");
      if (obs_mech[i].kind == MechanismKind::constant && k > 0)
        throw DomainError("observational mechanism of a non-root must depend on its parents");
      if (intervention_type == InterventionType::hard && int_mech[i].kind != MechanismKind::constant)
        throw DomainError("hard interventions need constant interventional mechanisms");
      if (obs_noise[i].scale <= 0.0 || int_noise[i].scale <= 0.0)
        throw DomainError("noise scale must be positive");
      if (obs_mech[i] == int_mech[i] && obs_noise[i] == int_noise[i])
        throw DomainError("interventional law equals observational law at node " +
                          std::to_string(i + 1));
    }
  }

  /// log p(z_i | z_Pa(i)) under the observational or interventional law.
  double log_conditional(int i, const VectorXd& z, bool intervened) const {
    const Mechanism& m = intervened ? int_mech[i] : obs_mech[i];
    const NoiseLaw& h = intervened ? int_noise[i] : obs_noise[i];
    const VectorXd phi = parent_values(i, z, m);
    const double f = m.value(phi);
    if (coupling == Coupling::additive) return h.log_pdf(z(i) - f);
    const double g = softplus(f) + kMultiplicativeFloor;
    return h.log_pdf(z(i) / g) - std::log(g);
  }

  /// Adds grad_z log p(z_i | z_Pa(i)) into `out`.
  void accumulate_conditional_score(int i, const VectorXd& z, bool intervened, VectorXd& out) const {
    const Mechanism& m = intervened ? int_mech[i] : obs_mech[i];
    const NoiseLaw& h = intervened ? int_noise[i] : obs_noise[i];
    const VectorXd phi = parent_values(i, z, m);
    const auto& pa = dag.parents(i);
    const double f = m.value(phi);
    const bool uses_parents = m.kind != MechanismKind::constant;
    if (coupling == Coupling::additive) {
      const double r = h.score(z(i) - f);
      out(i) += r;
      if (uses_parents) {
        const VectorXd df = m.gradient(phi);
        for (std::size_t k = 0; k < pa.size(); ++k) out(pa[k]) -= df(k) * r;
      }
      return;
    }
    const double g = softplus(f) + kMultiplicativeFloor;
    const double u = z(i) / g;
    const double r = h.score(u);
    out(i) += r / g;
    if (uses_parents) {
      const VectorXd df = m.gradient(phi);
      const double dg_df = sigmoid(f);
      for (std::size_t k = 0; k < pa.size(); ++k)
        out(pa[k]) -= (dg_df * df(k) / g) * (r * u + 1.0);
    }
  }

  /// Draws z_i given already-sampled parents.
  double sample_node(int i, const VectorXd& z, bool intervened, Rng& rng) const {
    const Mechanism& m = intervened ? int_mech[i] : obs_mech[i];
    const NoiseLaw& h = intervened ? int_noise[i] : obs_noise[i];
    const double f = m.value(parent_values(i, z, m));
    const double e = h.sample(rng);
    if (coupling == Coupling::additive) return f + e;
    return (softplus(f) + kMultiplicativeFloor) * e;
  }

  VectorXd parent_values(int i, const VectorXd& z, const Mechanism& m) const {
    if (m.kind == MechanismKind::constant) return VectorXd();
    const auto& pa = dag.parents(i);
    VectorXd phi(pa.size());
    for (std::size_t k = 0; k < pa.size(); ++k) phi(k) = z(pa[k]);
    return phi;
  }
};

/// Environment 0 is observational; environment m >= 1 intervenes on targets[m].
struct EnvironmentSet {
  std::vector<NodeSet> targets;

  int count() const { return static_cast<int>(targets.size()); }

  /// Identity layout: environment m intervenes on node m-1.
  static EnvironmentSet atomic(int n) {
    EnvironmentSet e;
    e.targets.assign(n + 1, {});
    for (int i = 0; i < n; ++i) e.targets[i + 1] = {i};
    return e;
  }

  /// Atomic layout with environments shuffled, so environment indices carry
  /// no information about node identities.
  static EnvironmentSet shuffled(int n, std::uint64_t seed) {
    std::vector<int> nodes(n);
    std::iota(nodes.begin(), nodes.end(), 0);
    Rng rng(seed);
    std::shuffle(nodes.begin(), nodes.end(), rng);
    EnvironmentSet e;
    e.targets.assign(n + 1, {});
    for (int m = 1; m <= n; ++m) e.targets[m] = {nodes[m - 1]};
    return e;
  }

  /// The single target of an atomic environment, or nullopt for env 0.
  std::optional<int> target(int m) const {
    if (m < 0 || m >= count()) throw DomainError("environment index out of range");
    if (targets[m].empty()) return std::nullopt;
    if (targets[m].size() != 1) throw DomainError("environment is not atomic");
    return targets[m][0];
  }

  /// m_i: the environment intervening on node i.
  int env_of(int node) const {
    for (int m = 1; m < count(); ++m)
      if (targets[m].size() == 1 && targets[m][0] == node) return m;
    throw DomainError("node " + std::to_string(node + 1) + " is never intervened");
  }
};

/// The linear observation map x = T z with its pseudoinverse.
struct MixingMap {
  MatrixXd T;
  MatrixXd pinv;

  MixingMap() = default;
  explicit MixingMap(MatrixXd t) : T(std::move(t)) {
    if (T.rows() < T.cols()) throw DomainError("mixing needs d >= n");
    if (numerical_rank(T, 1e-12) != T.cols()) throw DomainError("mixing must have rank n");
    pinv = pseudo_inverse(T);
  }

  int latent_dim() const { return static_cast<int>(T.cols()); }
  int observed_dim() const { return static_cast<int>(T.rows()); }
};

/// Rows of `z` are samples; returns rows x = T z.
inline MatrixXd mix(const MixingMap& map, const MatrixXd& z) {
  if (z.cols() != map.latent_dim()) throw DomainError("latent sample width does not match T");
  return z * map.T.transpose();
}

/// Ancestral sampling of K rows in environment m.
inline MatrixXd sample_latent(const Scm& scm, const EnvironmentSet& envs, int m, int k,
                              std::uint64_t seed) {
  const int n = scm.size();
  const auto target = envs.target(m);
  const auto order = *scm.dag.topological_order();
  Rng rng(seed);
  MatrixXd out(k, n);
  VectorXd z = VectorXd::Zero(n);
  for (int row = 0; row < k; ++row) {
    for (int i : order) z(i) = scm.sample_node(i, z, target && *target == i, rng);
    out.row(row) = z.transpose();
  }
  return out;
}

/// Options for random model generation; defaults are the documented ones.
struct ScmOptions {
  NoiseFamily noise_family = NoiseFamily::gaussian;
  double noise_scale = 1.0;
  SoftVariant soft_variant = SoftVariant::both;
  double soft_noise_factor = 1.5;
  double hard_shift = 1.0;
  double hard_noise_factor = 1.5;
  int nn_extra_width = 2;
  int pilot_samples = 4000;
};

namespace detail {

inline double signed_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  const double v = mag(rng);
  return sign(rng) ? v : -v;
}

inline MatrixXd gaussian_matrix(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd a(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = nd(rng);
  return a;
}

inline Mechanism draw_mechanism(MechanismKind kind, int arity, const ScmOptions& opt, Rng& rng) {
  switch (kind) {
    case MechanismKind::constant: return Mechanism::make_constant(0.0);
    case MechanismKind::linear: {
      VectorXd w(arity);
      for (int k = 0; k < arity; ++k) w(k) = signed_uniform(rng, 0.5, 1.5);
      return Mechanism::make_linear(w);
    }
    case MechanismKind::quadratic: {
      // Random rotation of eigenvalues bounded away from zero: full rank.
      Eigen::HouseholderQR<MatrixXd> qr(gaussian_matrix(rng, arity, arity));
      MatrixXd q = qr.householderQ();
      VectorXd lambda(arity);
      for (int k = 0; k < arity; ++k) lambda(k) = signed_uniform(rng, 0.5, 1.5);
      return Mechanism::make_quadratic(q * lambda.asDiagonal() * q.transpose());
    }
    case MechanismKind::two_layer_nn: {
      const int width = arity + opt.nn_extra_width;
      MatrixXd w;
      do {
        w = gaussian_matrix(rng, width, arity);
      } while (numerical_rank(w, 1e-8) != arity);
      VectorXd nu(width);
      for (int j = 0; j < width; ++j) nu(j) = signed_uniform(rng, 0.5, 2.0);
      std::uniform_real_distribution<double> b(-0.5, 0.5);
      return Mechanism::make_two_layer_nn(w, nu, b(rng));
    }
    case MechanismKind::generalized_linear: {
      VectorXd w(arity);
      for (int k = 0; k < arity; ++k) w(k) = signed_uniform(rng, 0.5, 1.5);
      return Mechanism::make_generalized_linear(w, 2.0);
    }
  }
  return Mechanism::make_constant(0.0);
}

/// Scales polynomial mechanisms so their output has unit standard deviation
/// over the pilot parent samples. Bounded kinds are left alone.
inline void normalize_output(Mechanism& m, int node, const Dag& dag, const MatrixXd& pilot) {
  if (m.kind != MechanismKind::linear && m.kind != MechanismKind::quadratic) return;
  const auto& pa = dag.parents(node);
  const int rows = static_cast<int>(pilot.rows());
  VectorXd vals(rows);
  VectorXd phi(pa.size());
  for (int r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < pa.size(); ++k) phi(k) = pilot(r, pa[k]);
    vals(r) = m.value(phi);
  }
  const double mean = vals.mean();
  const double sd = std::sqrt((vals.array() - mean).square().sum() / std::max(1, rows - 1));
  if (sd > 0.0 && std::isfinite(sd)) m.rescale(1.0 / sd);
}

}  // namespace detail

/// Draws a random SCM on `dag`. Non-root observational mechanisms are of
/// `kind`; roots use constants. Soft interventions redraw parameters of the
/// same kind and/or rescale the noise; hard interventions use a shifted
/// constant with widened noise. Two-layer networks get full-column-rank
/// first layers.
inline Scm random_scm(const Dag& dag, MechanismKind kind, Coupling coupling,
                      InterventionType type, std::uint64_t seed, const ScmOptions& opt = {}) {
  const int n = dag.size();
  Rng rng(seed);
  Scm scm;
  scm.dag = dag;
  scm.coupling = coupling;
  scm.intervention_type = type;
  scm.obs_mech.resize(n);
  scm.int_mech.resize(n);
  scm.obs_noise.assign(n, NoiseLaw{opt.noise_family, opt.noise_scale});
  scm.int_noise.assign(n, NoiseLaw{opt.noise_family, opt.noise_scale});

  const double root_level = coupling == Coupling::multiplicative ? 1.0 : 0.0;
  MatrixXd pilot = MatrixXd::Zero(opt.pilot_samples, n);
  Rng pilot_rng(splitmix64(seed ^ 0x5eedULL));
  const auto order = *dag.topological_order();
  const bool redraw_mech = opt.soft_variant != SoftVariant::noise_only;
  const bool redraw_noise = opt.soft_variant != SoftVariant::mechanism_only;

  for (int i : order) {
    const int arity = static_cast<int>(dag.parents(i).size());
    if (arity == 0) {
      scm.obs_mech[i] = Mechanism::make_constant(root_level);
    } else {
      scm.obs_mech[i] = detail::draw_mechanism(kind, arity, opt, rng);
      detail::normalize_output(scm.obs_mech[i], i, dag, pilot);
    }

    if (type == InterventionType::hard) {
      scm.int_mech[i] = Mechanism::make_constant(root_level + opt.hard_shift);
      scm.int_noise[i].scale = opt.noise_scale * opt.hard_noise_factor;
    } else {
      if (arity == 0 || !redraw_mech) {
        scm.int_mech[i] = scm.obs_mech[i];
        if (arity == 0 && redraw_mech) scm.int_mech[i].constant = root_level + opt.hard_shift;
      } else {
        scm.int_mech[i] = detail::draw_mechanism(kind, arity, opt, rng);
        detail::normalize_output(scm.int_mech[i], i, dag, pilot);
      }
      if (redraw_noise || scm.int_mech[i] == scm.obs_mech[i])
        scm.int_noise[i].scale = opt.noise_scale * opt.soft_noise_factor;
    }

    for (int r = 0; r < opt.pilot_samples; ++r) {
      VectorXd z = pilot.row(r).transpose();
      pilot(r, i) = scm.sample_node(i, z, false, pilot_rng);
    }
  }
  scm.validate();
  return scm;
}

/// Gaussian T, redrawn until cond(T) <= condition_cap.
inline MixingMap random_mixing(int n, int d, std::uint64_t seed, double condition_cap = 100.0) {
  if (d < n) throw DomainError("random_mixing needs d >= n");
  Rng rng(seed);
  for (;;) {
    MatrixXd t = detail::gaussian_matrix(rng, d, n);
    const double c = condition_number(t);
    if (std::isfinite(c) && c <= condition_cap) return MixingMap(t);
  }
}

/// Per-environment samples, all sharing one SCM and mixing.
struct Dataset {
  std::vector<MatrixXd> Z, X;
  std::uint64_t seed = 0;
  int samples_per_env = 0;
  EnvironmentSet envs;
  std::string scm_digest;
};

inline Dataset generate_dataset(const Scm& scm, const MixingMap& map, const EnvironmentSet& envs,
                                int k, std::uint64_t seed) {
  Dataset ds;
  ds.seed = seed;
  ds.samples_per_env = k;
  ds.envs = envs;
  for (int m = 0; m < envs.count(); ++m) {
    ds.Z.push_back(sample_latent(scm, envs, m, k, derive_seed(seed, {stream::samples, std::uint64_t(m)})));
    ds.X.push_back(mix(map, ds.Z.back()));
  }
  return ds;
}

}  // namespace scalei
