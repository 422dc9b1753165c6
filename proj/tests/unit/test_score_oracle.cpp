#include <cmath>

#include <gtest/gtest.h>

#include "scalei/score_oracle.hpp"

using namespace scalei;

namespace {

VectorXd fd_gradient(const ScoreOracle& o, const VectorXd& z, int m) {
  const double h = 1e-5;
  VectorXd g(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    VectorXd hi = z, lo = z;
    hi(k) += h;
    lo(k) -= h;
    g(k) = (o.log_density(hi, m) - o.log_density(lo, m)) / (2 * h);
  }
  return g;
}

Scm single_root() {
  Scm scm;
  scm.dag = Dag::empty(1);
  scm.obs_mech = {Mechanism::make_constant(0.0)};
  scm.int_mech = {Mechanism::make_constant(1.0)};
  scm.obs_noise = {NoiseLaw{}};
  scm.int_noise = {NoiseLaw{}};
  return scm;
}

}  // namespace

TEST(LatentScore, StandardGaussianRoot) {
  const Scm scm = single_root();
  const MixingMap t(MatrixXd::Identity(1, 1));
  const auto envs = EnvironmentSet::atomic(1);
  const ScoreOracle o(scm, t, envs);
  for (double z : {-2.0, 0.0, 0.3, 4.0}) EXPECT_DOUBLE_EQ(o.latent_score(VectorXd::Constant(1, z), 0)(0), -z);
}

TEST(LatentScore, LinearChainByHand) {
  const double w = 0.7;
  Scm scm;
  scm.dag = Dag::chain(2);
  scm.obs_mech = {Mechanism::make_constant(0.0), Mechanism::make_linear(VectorXd::Constant(1, w))};
  scm.int_mech = {Mechanism::make_constant(1.0), Mechanism::make_linear(VectorXd::Constant(1, -w))};
  scm.obs_noise = {NoiseLaw{}, NoiseLaw{}};
  scm.int_noise = {NoiseLaw{}, NoiseLaw{}};
  const MixingMap t(MatrixXd::Identity(2, 2));
  const auto envs = EnvironmentSet::atomic(2);
  const ScoreOracle o(scm, t, envs);
  for (int r = 0; r < 20; ++r) {
    const VectorXd z = VectorXd::Random(2) * 3;
    const VectorXd s = o.latent_score(z, 0);
    EXPECT_NEAR(s(0), -z(0) + w * (z(1) - w * z(0)), 1e-14);
    EXPECT_NEAR(s(1), -(z(1) - w * z(0)), 1e-14);
    EXPECT_LT((s - fd_gradient(o, z, 0)).norm(), 1e-7);
  }
}

TEST(LatentScore, MatchesFiniteDifferencesOnRandomModels) {
  int checked = 0;
  for (auto kind : {MechanismKind::linear, MechanismKind::quadratic, MechanismKind::two_layer_nn,
                    MechanismKind::generalized_linear})
    for (auto coupling : {Coupling::additive, Coupling::multiplicative})
      for (auto type : {InterventionType::soft, InterventionType::hard})
        for (auto fam : {NoiseFamily::gaussian, NoiseFamily::logistic}) {
          ScmOptions opt;
          opt.noise_family = fam;
          const Dag g = Dag::random(4, 0.6, 17 + checked);
          const Scm scm = random_scm(g, kind, coupling, type, 100 + checked, opt);
          const MixingMap t(MatrixXd::Identity(4, 4));
          const auto envs = EnvironmentSet::shuffled(4, 5);
          const ScoreOracle o(scm, t, envs);
          const MatrixXd z = sample_latent(scm, envs, 0, 10, 7);
          for (int m = 0; m <= 4; ++m)
            for (int r = 0; r < z.rows(); ++r) {
              const VectorXd zr = z.row(r).transpose();
              const VectorXd s = o.latent_score(zr, m);
              const VectorXd fd = fd_gradient(o, zr, m);
              if (fd.norm() > 1e-6) EXPECT_LT((s - fd).norm() / fd.norm(), 1e-5);
            }
          ++checked;
        }
  EXPECT_EQ(checked, 32);
}

TEST(ObservedScore, IdentityAndScaledMixing) {
  const Scm scm = random_scm(Dag::chain(3), MechanismKind::quadratic, Coupling::additive, InterventionType::soft, 1);
  const auto envs = EnvironmentSet::atomic(3);
  const MixingMap id(MatrixXd::Identity(3, 3));
  const MixingMap two(2.0 * MatrixXd::Identity(3, 3));
  const ScoreOracle a(scm, id, envs), b(scm, two, envs);
  for (int r = 0; r < 10; ++r) {
    const VectorXd x = VectorXd::Random(3);
    for (int m = 0; m <= 3; ++m) {
      EXPECT_LT((a.observed_score(x, m) - a.latent_score(x, m)).norm(), 1e-14);
      EXPECT_LT((b.observed_score(x, m) - 0.5 * b.latent_score(x / 2.0, m)).norm(), 1e-13);
    }
  }
}

TEST(ObservedScore, RoundTripAndScoreTransformation) {
  // 20 (T, U) pairs x 1000 points; U = T A spans image(T).
  for (std::uint64_t pair = 0; pair < 20; ++pair) {
    const int n = 3 + static_cast<int>(pair % 3);
    const int d = n + static_cast<int>(pair % (n + 1));
    const Scm scm = random_scm(Dag::random(n, 0.5, pair + 1), MechanismKind::quadratic, Coupling::additive,
                               InterventionType::soft, pair + 50);
    const MixingMap t = random_mixing(n, d, pair + 70);
    const auto envs = EnvironmentSet::shuffled(n, pair);
    const ScoreOracle o(scm, t, envs);
    Rng rng(pair);
    const MatrixXd a = detail::gaussian_matrix(rng, n, n);
    const MatrixXd u = t.T * a;
    const MatrixXd h = (t.pinv * u).transpose();
    ASSERT_GT(std::abs(h.determinant()), 1e-12);
    const MatrixXd z = sample_latent(scm, envs, 0, 1000, pair + 90);
    for (int r = 0; r < z.rows(); ++r) {
      const VectorXd zr = z.row(r).transpose();
      const VectorXd x = t.T * zr;
      const int m = r % (n + 1);
      const VectorXd sx = o.observed_score(x, m);
      const VectorXd sz = o.latent_score(zr, m);
      EXPECT_LT((t.T.transpose() * sx - sz).norm(), 1e-8 * std::max(1.0, sz.norm()));
      EXPECT_LT((u.transpose() * sx - h * sz).norm(), 1e-8 * std::max(1.0, sz.norm()));
    }
  }
}

TEST(ObservedScore, RejectsOffManifoldPoints) {
  const Scm scm = random_scm(Dag::chain(2), MechanismKind::quadratic, Coupling::additive, InterventionType::soft, 1);
  const MixingMap t = random_mixing(2, 4, 1);
  const auto envs = EnvironmentSet::atomic(2);
  const ScoreOracle o(scm, t, envs);
  const VectorXd x = t.T * VectorXd::Ones(2);
  EXPECT_NO_THROW(o.observed_score(x, 0));
  const MatrixXd q = complement_basis(t.T, 4, 1e-12);
  ASSERT_EQ(q.cols(), 2);
  EXPECT_THROW(o.observed_score(x + 1e-3 * q.col(0), 0), DomainError);
}

TEST(ScoreBatch, EmptyRepeatedAndLoopEquivalence) {
  const Scm scm = random_scm(Dag::diamond(), MechanismKind::two_layer_nn, Coupling::additive, InterventionType::soft, 2);
  const MixingMap t = random_mixing(4, 6, 3);
  const auto envs = EnvironmentSet::atomic(4);
  const ScoreOracle o(scm, t, envs);
  EXPECT_EQ(o.score_batch(MatrixXd(0, 6), 1).rows(), 0);
  const MatrixXd x = mix(t, sample_latent(scm, envs, 0, 50, 4));
  MatrixXd rep(2, 6);
  rep.row(0) = rep.row(1) = x.row(3);
  const MatrixXd sr = o.score_batch(rep, 2);
  EXPECT_TRUE((sr.row(0).array() == sr.row(1).array()).all());
  const MatrixXd s = o.score_batch(x, 3);
  for (int r = 0; r < x.rows(); ++r)
    EXPECT_TRUE((s.row(r).transpose().array() == o.observed_score(x.row(r).transpose(), 3).array()).all());
  const auto all = o.all_environment_scores(x);
  ASSERT_EQ(all.size(), 5u);
  EXPECT_TRUE((all[3].array() == s.array()).all());
}

TEST(HardScore, InterventionalTermIgnoresParents) {
  const Scm scm = random_scm(Dag::triangle(), MechanismKind::quadratic, Coupling::additive, InterventionType::hard, 5);
  const MixingMap t(MatrixXd::Identity(3, 3));
  const auto envs = EnvironmentSet::atomic(3);
  const ScoreOracle o(scm, t, envs);
  const MatrixXd z = sample_latent(scm, envs, 0, 50, 1);
  for (int r = 0; r < z.rows(); ++r) {
    const VectorXd zr = z.row(r).transpose();
    for (int i = 0; i < 3; ++i) {
      VectorXd term = VectorXd::Zero(3);
      scm.accumulate_conditional_score(i, zr, true, term);
      for (int k : scm.dag.parents(i)) {
        EXPECT_EQ(term(k), 0.0);
        VectorXd hi = zr, lo = zr;
        hi(k) += 1e-5;
        lo(k) -= 1e-5;
        VectorXd th = VectorXd::Zero(3), tl = VectorXd::Zero(3);
        scm.accumulate_conditional_score(i, hi, true, th);
        scm.accumulate_conditional_score(i, lo, true, tl);
        EXPECT_LT(std::abs(th(i) - tl(i)) / 2e-5, 1e-8);
      }
    }
    // Node 3 is a sink: its whole score coordinate in its own environment.
    for (int k : {0, 1}) {
      VectorXd hi = zr, lo = zr;
      hi(k) += 1e-5;
      lo(k) -= 1e-5;
      EXPECT_LT(std::abs(o.latent_score(hi, 3)(2) - o.latent_score(lo, 3)(2)) / 2e-5, 1e-8);
    }
  }
}
