#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "generators.hpp"
#include "mmtta/errors.hpp"
#include "mmtta/streaming_update.hpp"
#include "oracles.hpp"

using namespace mmtta;

namespace {

RowMatrix one_hot(const std::vector<int>& labels, Index classes) {
  RowMatrix r = RowMatrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) r(static_cast<Index>(i), labels[i]) = 1.0;
  return r;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(InitFromHead, ExampleHead) {
  HeadParams head{(Matrix(1, 2) << 3, 4).finished(), (Vector(1) << 2).finished()};
  const PerspectiveBank b = init_from_head(head, Perspective::M1);
  EXPECT_EQ(b.perspective, Perspective::M1);
  EXPECT_EQ(b.params[0].mean, (Vector(2) << 3, 4).finished());
  EXPECT_EQ(b.params[0].covariance, Matrix::Identity(2, 2));
  EXPECT_DOUBLE_EQ(b.params[0].log_prior, 14.5);
  EXPECT_EQ(b.stats[0].count, 0.0);
  EXPECT_EQ(b.stats[0].second_moment, Matrix::Zero(2, 2));
}

TEST(InitFromHead, ZeroHead) {
  HeadParams head{Matrix::Zero(3, 4), Vector::Zero(3)};
  const PerspectiveBank b = init_from_head(head, Perspective::Fused);
  for (const auto& g : b.params) {
    EXPECT_EQ(g.mean, Vector::Zero(4));
    EXPECT_EQ(g.log_prior, 0.0);
    EXPECT_DOUBLE_EQ(g.prior, 1.0 / 3.0);
  }
}

TEST(InitFromHead, SoftmaxMatchesHeadOnRandomFeatures) {
  gen::Rng rng(21);
  for (int h = 0; h < 10; ++h) {
    const HeadParams head = gen::head(rng, 5, 8, 1.5);
    const PerspectiveBank b = init_from_head(head, Perspective::Fused);
    const RowMatrix z = rng.rows(100, 8, 2.0);
    const RowMatrix gda = oracle::softmax_rows(batch_scores(z, b));
    const RowMatrix src = oracle::softmax_rows(head.logits(z));
    EXPECT_LE(max_abs(gda - src), 1e-9);
  }
}

TEST(InitFromHead, NormalizedPriorSeedsEma) {
  gen::Rng rng(22);
  const PerspectiveModel m = init_model(gen::head(rng, 4, 3), Perspective::M2, 0.9);
  double sum = 0.0;
  for (Index c = 0; c < 4; ++c) {
    sum += m.ema.classes[c].prior;
    EXPECT_EQ(m.ema.classes[c].prior, m.bank.params[c].prior);
    EXPECT_EQ(m.ema.classes[c].mean, m.bank.params[c].mean);
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(m.ema.alpha, 0.9);
}

TEST(InitFromHead, RejectsNonFiniteHead) {
  HeadParams head{Matrix::Zero(2, 2), Vector::Zero(2)};
  head.weights(1, 0) = NAN;
  EXPECT_THROW(init_from_head(head, Perspective::M1), RejectedInput);
}

TEST(BatchDeltas, HardAssignment) {
  RowMatrix z(1, 2);
  z << 1, 2;
  const auto d = batch_deltas(z, one_hot({0}, 2));
  EXPECT_EQ(d[0].count, 1.0);
  EXPECT_EQ(d[1].count, 0.0);
  EXPECT_EQ(d[0].first_moment, (Vector(2) << 1, 2).finished());
  EXPECT_EQ(d[0].second_moment, (Matrix(2, 2) << 1, 2, 2, 4).finished());
  EXPECT_EQ(d[1].first_moment, Vector::Zero(2));
  EXPECT_EQ(d[1].second_moment, Matrix::Zero(2, 2));
}

TEST(BatchDeltas, SoftSplitIsLinear) {
  RowMatrix z(1, 2);
  z << -1.5, 4;
  RowMatrix resp(1, 2);
  resp << 0.5, 0.5;
  const auto d = batch_deltas(z, resp);
  const auto full = batch_deltas(z, one_hot({0}, 2));
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(d[c].count, 0.5);
    EXPECT_EQ(d[c].first_moment, 0.5 * full[0].first_moment);
    EXPECT_EQ(d[c].second_moment, 0.5 * full[0].second_moment);
  }
}

TEST(BatchDeltas, MatchesPerSampleLoop) {
  gen::Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const RowMatrix z = rng.rows(100, 5, 2.0);
    const RowMatrix resp = rng.simplex_rows(100, 4);
    const auto d = batch_deltas(z, resp);
    double total = 0.0;
    for (Index c = 0; c < 4; ++c) {
      const oracle::Moments m = oracle::moments(z, resp, c);
      EXPECT_NEAR(d[c].count, m.n, 1e-10);
      EXPECT_LE((d[c].first_moment - m.s).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LE(max_abs(d[c].second_moment - m.q), 1e-10);
      EXPECT_EQ(d[c].second_moment, d[c].second_moment.transpose());
      total += d[c].count;
    }
    EXPECT_NEAR(total, 100.0, 1e-9);
  }
}

TEST(BatchDeltas, RejectsInvalidRows) {
  const RowMatrix z = RowMatrix::Zero(2, 3);
  RowMatrix resp(2, 2);
  resp << 0.5, 0.5, 0.7, 0.2;
  EXPECT_THROW(batch_deltas(z, resp), RejectedBatch);
  resp << 0.5, 0.5, 1.2, -0.2;
  EXPECT_THROW(batch_deltas(z, resp), RejectedBatch);
  resp << 0.5, 0.5, NAN, 0.5;
  EXPECT_THROW(batch_deltas(z, resp), RejectedBatch);
  EXPECT_THROW(batch_deltas(RowMatrix::Zero(3, 3), one_hot({0, 1}, 2)), ContractViolation);
}

TEST(AbsorbAndReestimate, OneSamplePerClass) {
  gen::Rng rng(24);
  PerspectiveBank b = init_from_head(gen::head(rng, 3, 4), Perspective::Fused);
  const RowMatrix z = rng.rows(3, 4);
  const auto est = absorb_and_reestimate(b, batch_deltas(z, one_hot({0, 1, 2}, 3)));
  for (Index c = 0; c < 3; ++c) {
    EXPECT_EQ(est[c].status, ClassStatus::MeanOnly);
    EXPECT_LE((est[c].mle.mean - z.row(c).transpose()).norm(), 1e-15);
    EXPECT_LE(max_abs(est[c].mle.covariance), 1e-15);
    EXPECT_DOUBLE_EQ(est[c].mle.prior, 1.0 / 3.0);
  }
}

TEST(AbsorbAndReestimate, TwoBatchesEqualCombinedBatch) {
  gen::Rng rng(25);
  const HeadParams head = gen::head(rng, 3, 4);
  const RowMatrix z1 = rng.rows(10, 4), z2 = rng.rows(7, 4);
  const RowMatrix r1 = rng.simplex_rows(10, 3), r2 = rng.simplex_rows(7, 3);

  PerspectiveBank streamed = init_from_head(head, Perspective::M1);
  absorb_and_reestimate(streamed, batch_deltas(z1, r1));
  const auto est = absorb_and_reestimate(streamed, batch_deltas(z2, r2));

  RowMatrix z(17, 4), r(17, 3);
  z << z1, z2;
  r << r1, r2;
  for (Index c = 0; c < 3; ++c) {
    const auto [mean, cov] = oracle::weighted_mean_cov(z, r.col(c));
    EXPECT_LE((est[c].mle.mean - mean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE(max_abs(est[c].mle.covariance - cov), 1e-10);
    EXPECT_NEAR(est[c].mle.prior, r.col(c).sum() / 17.0, 1e-12);
  }
}

TEST(AbsorbAndReestimate, EmptyClassHolds) {
  gen::Rng rng(26);
  PerspectiveBank b = init_from_head(gen::head(rng, 3, 2), Perspective::M2);
  const auto est = absorb_and_reestimate(b, batch_deltas(rng.rows(5, 2), one_hot({0, 1, 0, 0, 1}, 3)));
  EXPECT_EQ(est[2].status, ClassStatus::Hold);
  EXPECT_EQ(est[0].status, ClassStatus::Full);
  EXPECT_EQ(est[1].status, ClassStatus::Full);
}

TEST(AbsorbAndReestimate, StreamingMatchesBatchOnEveryPrefix) {
  gen::Rng rng(27);
  PerspectiveBank b = init_from_head(gen::head(rng, 3, 5), Perspective::Fused);
  RowMatrix all_z(0, 5), all_r(0, 3);
  for (int t = 0; t < 15; ++t) {
    const Index n = rng.integer(1, 20);
    const RowMatrix z = rng.rows(n, 5, 3.0), r = rng.simplex_rows(n, 3);
    absorb_and_reestimate(b, batch_deltas(z, r));
    RowMatrix zz(all_z.rows() + n, 5), rr(all_r.rows() + n, 3);
    zz << all_z, z;
    rr << all_r, r;
    all_z = zz;
    all_r = rr;
    for (Index c = 0; c < 3; ++c) {
      const oracle::Moments m = oracle::moments(all_z, all_r, c);
      EXPECT_NEAR(b.stats[c].count, m.n, 1e-10);
      EXPECT_LE((b.stats[c].first_moment - m.s).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LE(max_abs(b.stats[c].second_moment - m.q), 1e-10 * std::max(1.0, max_abs(m.q)));
    }
  }
}

TEST(EmaBlend, ScalarFormula) {
  EmaState s;
  s.alpha = 0.9;
  s.classes = {EmaClass{0.5, (Vector(1) << 1.0).finished(), (Matrix(1, 1) << 1.0).finished()},
               EmaClass{0.5, (Vector(1) << 0.0).finished(), (Matrix(1, 1) << 1.0).finished()}};
  std::vector<ClassEstimate> est(2);
  est[0] = {ClassStatus::Full, MleEstimate{0.5, (Vector(1) << 2.0).finished(), (Matrix(1, 1) << 2.0).finished()}};
  est[1] = {ClassStatus::Full, MleEstimate{0.5, (Vector(1) << 0.0).finished(), (Matrix(1, 1) << 1.0).finished()}};
  const EmaState n = ema_blend(s, est);
  EXPECT_NEAR(n.classes[0].mean[0], 1.1, 1e-15);
  EXPECT_NEAR(n.classes[0].covariance(0, 0), 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(n.classes[0].prior, 0.5);
}

TEST(EmaBlend, AlphaOneKeepsState) {
  gen::Rng rng(28);
  PerspectiveModel m = init_model(gen::head(rng, 3, 4), Perspective::Fused, 1.0);
  const EmaState before = m.ema;
  UpdateConfig cfg;
  cfg.alpha = 1.0;
  for (int t = 0; t < 5; ++t) update_model(m, rng.rows(16, 4, 2.0), rng.simplex_rows(16, 3), cfg);
  for (Index c = 0; c < 3; ++c) {
    EXPECT_EQ(m.ema.classes[c].mean, before.classes[c].mean);
    EXPECT_EQ(m.ema.classes[c].covariance, before.classes[c].covariance);
    EXPECT_NEAR(m.ema.classes[c].prior, before.classes[c].prior, 1e-15);
    EXPECT_EQ(m.bank.params[c].mean, before.classes[c].mean);
  }
}

TEST(EmaBlend, AlphaZeroInstallsFreshMle) {
  gen::Rng rng(29);
  PerspectiveModel m = init_model(gen::head(rng, 2, 3), Perspective::M1, 0.0);
  UpdateConfig cfg;
  cfg.alpha = 0.0;
  const RowMatrix z = rng.rows(40, 3);
  const RowMatrix r = rng.simplex_rows(40, 2);
  const auto est = update_model(m, z, r, cfg);
  for (Index c = 0; c < 2; ++c) {
    const ShrunkCovariance want = shrink_covariance(est[c].mle.covariance, cfg.eps_shrink);
    EXPECT_EQ(m.bank.params[c].mean, est[c].mle.mean);
    EXPECT_EQ(m.bank.params[c].covariance, want.covariance);
    EXPECT_NEAR(m.bank.params[c].prior, est[c].mle.prior, 1e-15);
  }
}

TEST(EmaBlend, BlendedValuesStayBetweenInputs) {
  gen::Rng rng(30);
  for (int t = 0; t < 100; ++t) {
    const Index d = 3, classes = 3;
    PerspectiveModel m = init_model(gen::head(rng, classes, d), Perspective::Fused, rng.uniform());
    std::vector<ClassEstimate> est(classes);
    for (Index c = 0; c < classes; ++c) {
      est[c] = {ClassStatus::Full, MleEstimate{1.0 / classes, rng.vector(d), rng.spd(d)}};
    }
    const EmaState n = ema_blend(m.ema, est);
    for (Index c = 0; c < classes; ++c) {
      const auto& a = m.ema.classes[c];
      const auto& b = est[c].mle;
      for (Index i = 0; i < d; ++i) {
        EXPECT_GE(n.classes[c].mean[i], std::min(a.mean[i], b.mean[i]) - 1e-15);
        EXPECT_LE(n.classes[c].mean[i], std::max(a.mean[i], b.mean[i]) + 1e-15);
        for (Index j = 0; j < d; ++j) {
          EXPECT_GE(n.classes[c].covariance(i, j), std::min(a.covariance(i, j), b.covariance(i, j)) - 1e-15);
          EXPECT_LE(n.classes[c].covariance(i, j), std::max(a.covariance(i, j), b.covariance(i, j)) + 1e-15);
        }
      }
    }
  }
}

TEST(EmaBlend, PriorFloorApplied) {
  EmaState s;
  s.alpha = 0.0;
  s.classes = {EmaClass{0.5, Vector::Zero(1), Matrix::Identity(1, 1)},
               EmaClass{0.5, Vector::Zero(1), Matrix::Identity(1, 1)}};
  std::vector<ClassEstimate> est(2);
  est[0] = {ClassStatus::Full, MleEstimate{1.0, Vector::Zero(1), Matrix::Identity(1, 1)}};
  est[1] = {ClassStatus::MeanOnly, MleEstimate{0.0, Vector::Zero(1), Matrix::Zero(1, 1)}};
  const EmaState n = ema_blend(s, est);
  EXPECT_EQ(n.classes[1].prior, 1e-8);
  EXPECT_NEAR(n.classes[0].prior + n.classes[1].prior, 1.0, 1e-15);
}

TEST(UpdateModel, AbsentClassKeepsInitialization) {
  gen::Rng rng(31);
  const HeadParams head = gen::head(rng, 4, 3);
  PerspectiveModel m = init_model(head, Perspective::Fused, 0.9);
  const PerspectiveBank init = m.bank;
  std::vector<int> labels(16);
  for (int t = 0; t < 20; ++t) {
    for (int& l : labels) l = rng.integer(0, 2);  // class 3 never appears
    update_model(m, rng.rows(16, 3), one_hot(labels, 4), UpdateConfig{});
  }
  EXPECT_EQ(m.bank.params[3].mean, init.params[3].mean);
  EXPECT_EQ(m.bank.params[3].covariance, init.params[3].covariance);
  EXPECT_EQ(m.bank.params[3].chol, init.params[3].chol);
  EXPECT_EQ(m.bank.params[3].log_det, init.params[3].log_det);
  EXPECT_EQ(m.bank.stats[3].count, 0.0);
}

TEST(UpdateModel, PriorsNormalizedAfterEveryUpdate) {
  gen::Rng rng(32);
  PerspectiveModel m = init_model(gen::head(rng, 5, 4, 2.0), Perspective::M1, 0.9);
  for (int t = 0; t < 30; ++t) {
    update_model(m, rng.rows(8, 4), rng.simplex_rows(8, 5, 3.0), UpdateConfig{});
    double s = 0.0, e = 0.0;
    for (Index c = 0; c < 5; ++c) {
      s += m.bank.params[c].prior;
      e += m.ema.classes[c].prior;
      EXPECT_EQ(m.bank.params[c].log_prior, std::log(m.bank.params[c].prior));
      EXPECT_GE(m.bank.params[c].prior, 1e-8 * (1.0 - 1e-12));
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_NEAR(e, 1.0, 1e-9);
  }
}

TEST(UpdateModel, RejectedBatchLeavesModelUntouched) {
  gen::Rng rng(33);
  PerspectiveModel m = init_model(gen::head(rng, 2, 2), Perspective::M1, 0.9);
  update_model(m, rng.rows(4, 2), rng.simplex_rows(4, 2), UpdateConfig{});
  const PerspectiveModel before = m;
  RowMatrix bad = rng.simplex_rows(4, 2);
  bad(2, 0) += 0.1;
  EXPECT_THROW(update_model(m, rng.rows(4, 2), bad, UpdateConfig{}), RejectedBatch);
  for (Index c = 0; c < 2; ++c) {
    EXPECT_EQ(m.bank.stats[c].count, before.bank.stats[c].count);
    EXPECT_EQ(m.bank.params[c].covariance, before.bank.params[c].covariance);
    EXPECT_EQ(m.ema.classes[c].prior, before.ema.classes[c].prior);
  }
}

TEST(UpdateModel, InstalledCovariancesSpdAboveFloor) {
  gen::Rng rng(34);
  PerspectiveModel m = init_model(gen::head(rng, 3, 6), Perspective::Fused, 0.5);
  UpdateConfig cfg;
  cfg.alpha = 0.5;
  for (int t = 0; t < 20; ++t) {
    // rank-deficient batches: 3 samples in 6 dimensions
    update_model(m, rng.rows(3, 6), rng.simplex_rows(3, 3), cfg);
    for (const auto& g : m.bank.params) {
      const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(g.covariance).eigenvalues().minCoeff();
      EXPECT_GE(min_eig, cfg.eps_shrink - 1e-12);
      EXPECT_EQ(g.covariance, g.covariance.transpose());
    }
  }
}
