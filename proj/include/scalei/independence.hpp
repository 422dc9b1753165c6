#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "errors.hpp"

namespace scalei {

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw DomainError("pearson needs equal-length samples");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double sa = std::sqrt((da * da).sum());
  const double sb = std::sqrt((db * db).sum());
  if (sa == 0.0 || sb == 0.0) throw DomainError("pearson of a constant sample");
  return (da * db).sum() / (sa * sb);
}

namespace detail {
// U-centred pairwise distance matrix (zero diagonal).
inline Eigen::MatrixXd u_centred_distances(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) d(i, j) = std::abs(v(i) - v(j));
  const Eigen::VectorXd row_sum = d.rowwise().sum();
  const double total = row_sum.sum();
  const double nn = static_cast<double>(n);
  d.colwise() -= row_sum / (nn - 2.0);
  d.rowwise() -= row_sum.transpose() / (nn - 2.0);
  d.array() += total / ((nn - 1.0) * (nn - 2.0));
  d.diagonal().setZero();
  return d;
}
}  // namespace detail

/// Bias-corrected distance correlation (U-statistic form). Its population
/// value is zero iff a and b are independent; the sample value fluctuates
/// around zero under independence and is clamped at zero before the root.
inline double distance_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 4)
    throw DomainError("distance correlation needs at least 4 paired samples");
  const Eigen::MatrixXd da = detail::u_centred_distances(a);
  const Eigen::MatrixXd db = detail::u_centred_distances(b);
  const double vab = (da.array() * db.array()).sum();
  const double vaa = (da.array() * da.array()).sum();
  const double vbb = (db.array() * db.array()).sum();
  if (vaa <= 0.0 || vbb <= 0.0) return 0.0;
  return std::sqrt(std::max(0.0, vab / std::sqrt(vaa * vbb)));
}

}  // namespace scalei
