#pragma once

#include <cmath>

#include "scm.hpp"

namespace scalei {

/// Exact latent and observed scores of a simulated model in every
/// environment. Holds references; the model and mixing must outlive it.
class ScoreOracle {
public:
  ScoreOracle(const Scm& scm, const MixingMap& mixing, const EnvironmentSet& envs)
      : scm_(&scm), mixing_(&mixing), envs_(&envs) {
    if (mixing.latent_dim() != scm.size()) throw DomainError("mixing width does not match the model");
  }

  const Scm& scm() const { return *scm_; }
  const MixingMap& mixing() const { return *mixing_; }
  const EnvironmentSet& environments() const { return *envs_; }

  /// log density of z in environment m (sum of log conditionals).
  double log_density(const VectorXd& z, int m) const {
    const auto target = envs_->target(m);
    double s = 0.0;
    for (int i = 0; i < scm_->size(); ++i) {
      const bool swapped = target && *target == i;
      s += scm_->log_conditional(i, z, swapped);
    }
    return s;
  }

  /// s_Z^m(z): sum of conditional score terms, with the target's term
  /// replaced by its interventional law. Terms are accumulated in node order
  /// in every environment, so coordinates untouched by the intervention come
  /// out bit-identical across environments.
  VectorXd latent_score(const VectorXd& z, int m) const {
    const auto target = envs_->target(m);
    VectorXd out = VectorXd::Zero(scm_->size());
    for (int i = 0; i < scm_->size(); ++i)
      scm_->accumulate_conditional_score(i, z, target && *target == i, out);
    return out;
  }

  /// (T^+)^T s_Z^m(T^+ x): the representative of s_X^m inside image(T).
  VectorXd observed_score(const VectorXd& x, int m) const {
    const VectorXd z = mixing_->pinv * x;
    const double residual = (mixing_->T * z - x).norm();
    if (residual > 1e-8 * std::max(1.0, x.norm()))
      throw DomainError("observation lies off image(T)");
    return mixing_->pinv.transpose() * latent_score(z, m);
  }

  /// Row-wise observed_score.
  MatrixXd score_batch(const MatrixXd& x, int m) const {
    MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      out.row(r) = observed_score(x.row(r).transpose(), m).transpose();
    return out;
  }

  /// Row-wise latent_score.
  MatrixXd latent_score_batch(const MatrixXd& z, int m) const {
    MatrixXd out(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      out.row(r) = latent_score(z.row(r).transpose(), m).transpose();
    return out;
  }

  /// Observed scores of every environment at the same rows of `x`
  /// (index 0 = observational).
  std::vector<MatrixXd> all_environment_scores(const MatrixXd& x) const {
    std::vector<MatrixXd> out;
    for (int m = 0; m < envs_->count(); ++m) out.push_back(score_batch(x, m));
    return out;
  }

private:
  const Scm* scm_;
  const MixingMap* mixing_;
  const EnvironmentSet* envs_;
};

}  // namespace scalei
