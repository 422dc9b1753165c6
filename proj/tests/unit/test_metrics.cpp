#include <gtest/gtest.h>

#include "scalei/metrics.hpp"
#include "scalei/scm.hpp"

using namespace scalei;

namespace {

MatrixXd latents(const Dag& g, std::uint64_t seed, int k = 3000) {
  const Scm scm = random_scm(g, MechanismKind::quadratic, Coupling::additive, InterventionType::soft, seed);
  return sample_latent(scm, EnvironmentSet::atomic(g.size()), 0, k, seed + 1);
}

// Zhat column k holds Z_{pi[k]} times c[k].
MatrixXd relabel(const MatrixXd& z, const std::vector<int>& pi, const VectorXd& c) {
  MatrixXd out(z.rows(), z.cols());
  for (std::size_t k = 0; k < pi.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = c(k) * z.col(pi[k]);
  return out;
}

}  // namespace

TEST(ScalingConsistency, PureScaling) {
  const MatrixXd z = latents(Dag::diamond(), 1);
  const auto s = scaling_consistency(z, 3.0 * z, Dag::diamond());
  EXPECT_NEAR(s.min_corr, 1.0, 1e-12);
  EXPECT_LT(s.mixing_residual, 1e-10);
  EXPECT_TRUE(s.passes());
  for (double c : s.per_node_corr) EXPECT_NEAR(c, 1.0, 1e-12);
}

TEST(ScalingConsistency, ValidOrderWithDiagonalScaling) {
  const Dag g = Dag::diamond();
  const MatrixXd z = latents(g, 2);
  const VectorXd c = (VectorXd(4) << -2.0, 0.1, 5.0, 1.5).finished();
  const auto s = scaling_consistency(z, relabel(z, {0, 2, 1, 3}, c), g);
  EXPECT_NEAR(s.min_corr, 1.0, 1e-12);
  EXPECT_EQ(s.matched_order.pi, (std::vector<int>{0, 2, 1, 3}));
  EXPECT_LT(s.mixing_residual, 1e-10);
}

TEST(ScalingConsistency, InjectedCrossTermIsMeasured) {
  // Nodes 2 and 3 of the diamond are not surrounded by each other.
  const Dag g = Dag::diamond();
  const MatrixXd z = latents(g, 3);
  MatrixXd zhat = 2.0 * z;
  zhat.col(1) += 0.5 * z.col(2);
  const auto s = scaling_consistency(z, zhat, g);
  // Least-squares oracle: regress Zhat_2 on Z with an intercept.
  MatrixXd design(z.rows(), 5);
  design.leftCols(4) = z;
  design.col(4).setOnes();
  const VectorXd coef = design.colPivHouseholderQr().solve(zhat.col(1));
  EXPECT_NEAR(s.mixing_residual, std::abs(coef(2) / coef(1)), 1e-9);
  EXPECT_NEAR(s.mixing_residual, 0.25, 1e-9);
  EXPECT_FALSE(s.passes());
  EXPECT_GT(mixing_consistency(z, zhat, g, surround_map(g)).mixing_residual, 0.2);
}

TEST(ScalingConsistency, InvariantToRescalingAndValidRelabeling) {
  const Dag g = Dag::diamond();
  const MatrixXd z = latents(g, 4);
  MatrixXd zhat = z;
  zhat.col(3) += 0.05 * z.col(0);
  zhat.col(1) += 0.02 * z.col(2);
  const auto base = scaling_consistency(z, zhat, g);
  const VectorXd c = (VectorXd(4) << 7.0, -0.3, 2.0, 11.0).finished();
  const auto scaled = scaling_consistency(z, zhat * c.asDiagonal(), g);
  EXPECT_NEAR(scaled.min_corr, base.min_corr, 1e-12);
  EXPECT_NEAR(scaled.mixing_residual, base.mixing_residual, 1e-9);
  MatrixXd swapped = zhat;
  swapped.col(1) = zhat.col(2);
  swapped.col(2) = zhat.col(1);
  const auto relabeled = scaling_consistency(z, swapped, g);
  EXPECT_NEAR(relabeled.min_corr, base.min_corr, 1e-12);
  EXPECT_NEAR(relabeled.mixing_residual, base.mixing_residual, 1e-9);
}

TEST(ScalingConsistency, Errors) {
  const MatrixXd z = latents(Dag::chain(3), 5, 100);
  MatrixXd bad = z;
  bad.col(1).setConstant(2.0);
  EXPECT_THROW(scaling_consistency(z, bad, Dag::chain(3)), DomainError);
  EXPECT_THROW(scaling_consistency(z.topRows(3), z.topRows(3), Dag::chain(3)), DomainError);
  EXPECT_THROW(scaling_consistency(z, z.leftCols(2), Dag::chain(3)), DomainError);
}

TEST(MixingConsistency, EdgelessGraphMatchesScaling) {
  const Dag g = Dag::empty(3);
  const MatrixXd z = latents(g, 6);
  MatrixXd zhat = z;
  zhat.col(2) += 0.3 * z.col(0);
  EXPECT_EQ(mixing_consistency(z, zhat, g, surround_map(g)).mixing_residual,
            scaling_consistency(z, zhat, g).mixing_residual);
}

TEST(MixingConsistency, ChainExemptsOnlyTheSinkFromItsParent) {
  const Dag g = Dag::chain(3);
  const MatrixXd z = latents(g, 7);
  MatrixXd zhat = z;
  zhat.col(2) += 0.4 * z.col(1);
  EXPECT_LT(mixing_consistency(z, zhat, g, surround_map(g)).mixing_residual, 1e-10);
  EXPECT_NEAR(scaling_consistency(z, zhat, g).mixing_residual, 0.4, 1e-9);
  zhat.col(1) += 0.4 * z.col(0);
  EXPECT_NEAR(mixing_consistency(z, zhat, g, surround_map(g)).mixing_residual, 0.4, 1e-9);
}

TEST(MixingConsistency, TriangleAllowedPattern) {
  const Dag g = Dag::triangle();
  const MatrixXd z = latents(g, 8);
  MatrixXd zhat = z;
  zhat.col(1) += 0.6 * z.col(0);
  zhat.col(2) += 0.3 * z.col(0) - 0.9 * z.col(1);
  const auto sur = surround_map(g);
  EXPECT_LT(mixing_consistency(z, zhat, g, sur).mixing_residual, 1e-10);
  zhat.col(0) += 0.2 * z.col(2);
  EXPECT_GT(mixing_consistency(z, zhat, g, sur).mixing_residual, 0.1);
}

TEST(MixingConsistency, NeverExceedsScaling) {
  Rng rng(9);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Dag g = Dag::random(4, 0.6, seed);
    const MatrixXd z = latents(g, seed + 10, 500);
    const MatrixXd zhat = z * (MatrixXd::Identity(4, 4) + 0.1 * detail::gaussian_matrix(rng, 4, 4));
    EXPECT_LE(mixing_consistency(z, zhat, g, surround_map(g)).mixing_residual,
              scaling_consistency(z, zhat, g).mixing_residual);
  }
}

TEST(Shd, Examples) {
  EXPECT_EQ(shd(Dag::diamond(), Dag::diamond()), 0);
  EXPECT_EQ(shd(Dag::chain(3), Dag::empty(3)), 2);
  EXPECT_EQ(shd(Dag::chain(2), Dag({{1}, {}})), 1);
  EXPECT_THROW(shd(Dag::chain(2), Dag::chain(3)), StructuralError);
}

TEST(Shd, IsAMetric) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Dag a = Dag::random(5, 0.5, seed), b = Dag::random(5, 0.5, seed + 100), c = Dag::random(5, 0.5, seed + 200);
    EXPECT_EQ(shd(a, b), shd(b, a));
    EXPECT_LE(shd(a, c), shd(a, b) + shd(b, c));
    EXPECT_EQ(shd(a, a), 0);
    if (!(a == b)) {
      EXPECT_GT(shd(a, b), 0);
    }
  }
}
