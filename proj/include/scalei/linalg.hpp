#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace scalei {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Number of singular values above rel_tol * largest.
inline int numerical_rank(const MatrixXd& a, double rel_tol) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

/// Moore-Penrose pseudoinverse via SVD.
inline MatrixXd pseudo_inverse(const MatrixXd& a, double rel_tol = 1e-12) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  VectorXd inv = VectorXd::Zero(s.size());
  const double cut = s.size() ? rel_tol * s(0) : 0.0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cut) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Orthonormal basis (columns) of the column space of `a`.
inline MatrixXd range_basis(const MatrixXd& a, double rel_tol) {
  if (a.cols() == 0 || a.rows() == 0) return MatrixXd(a.rows(), 0);
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  int r = 0;
  if (s(0) > 0.0)
    for (int i = 0; i < s.size(); ++i)
      if (s(i) > rel_tol * s(0)) ++r;
  return svd.matrixU().leftCols(r);
}

/// Orthonormal basis of the orthogonal complement of span(columns of a)
/// inside R^dim.
inline MatrixXd complement_basis(const MatrixXd& a, int dim, double rel_tol) {
  if (a.cols() == 0) return MatrixXd::Identity(dim, dim);
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeFullU);
  const auto& s = svd.singularValues();
  int r = 0;
  if (s.size() && s(0) > 0.0)
    for (int i = 0; i < s.size(); ++i)
      if (s(i) > rel_tol * s(0)) ++r;
  return svd.matrixU().rightCols(dim - r);
}

inline double condition_number(const MatrixXd& a) {
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 1.0;
  const double lo = s(s.size() - 1);
  return lo > 0.0 ? s(0) / lo : std::numeric_limits<double>::infinity();
}

}  // namespace scalei
