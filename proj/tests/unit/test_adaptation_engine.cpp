#include <gtest/gtest.h>

#include "certify.hpp"
#include "mmtta/errors.hpp"

using namespace mmtta;

namespace {

ScenarioSpec small_source(std::uint64_t seed = 21) {
  RandomScenarioOptions o;
  o.num_classes = 3;
  o.raw_dim = 6;
  o.class_seed = 4;
  return make_random_scenario(o, 0, seed);
}

AdaptationConfig small_config() {
  AdaptationConfig c;
  c.latent_dim = 6;
  c.source_samples = 300;
  c.prefit_epochs = 60;
  c.seed = 8;
  c.lr = 1e-3;
  return c;
}

std::vector<Sample> target_stream(std::uint64_t n, Corruption corr = {}) {
  ScenarioSpec s = small_source(77);
  s.samples = n;
  s.corruption = corr;
  return generate(s);
}

void expect_same_bank(const PerspectiveBank& a, const PerspectiveBank& b) {
  ASSERT_EQ(a.num_classes, b.num_classes);
  for (Index c = 0; c < a.num_classes; ++c) {
    EXPECT_EQ(a.params[c].prior, b.params[c].prior);
    EXPECT_EQ(a.params[c].mean, b.params[c].mean);
    EXPECT_EQ(a.params[c].covariance, b.params[c].covariance);
    EXPECT_EQ(a.stats[c].count, b.stats[c].count);
  }
}

}  // namespace

TEST(Forward, MatchesPerSampleOracle) {
  gen::Rng rng(71);
  for (int t = 0; t < 20; ++t) {
    const ToyEncoderParams p = gen::encoder(rng, 5, 4, 3);
    const RowMatrix x1 = rng.rows(7, 5, 2.0), x2 = rng.rows(7, 5, 2.0);
    const BatchView v = forward(x1, x2, p);
    const oracle::Features f = oracle::forward(x1, x2, p);
    EXPECT_LE((v.z_m1 - f.z1).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((v.z_m2 - f.z2).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((v.z_fused - f.zf).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((v.source_logits - f.logits).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((v.src_posterior - oracle::softmax_rows(f.logits)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Forward, SelectionMapPassesModalityOne) {
  gen::Rng rng(72);
  ToyEncoderParams p = gen::encoder(rng, 5, 4, 3);
  p.ln_scale_m1.setOnes();
  p.ln_shift_m1.setZero();
  p.fusion.setZero();
  p.fusion.leftCols(4).setIdentity();
  const BatchView v = forward(rng.rows(6, 5), rng.rows(6, 5), p);
  EXPECT_EQ(v.z_fused, v.z_m1);
}

TEST(Forward, ZeroInputGivesShift) {
  gen::Rng rng(73);
  const ToyEncoderParams p = gen::encoder(rng, 5, 4, 3);
  const BatchView v = forward(RowMatrix::Zero(2, 5), RowMatrix::Zero(2, 5), p);
  for (Index i = 0; i < 2; ++i) {
    EXPECT_EQ(Vector(v.z_m1.row(i).transpose()), p.ln_shift_m1);
    EXPECT_EQ(Vector(v.z_m2.row(i).transpose()), p.ln_shift_m2);
  }
}

TEST(Forward, DeterministicAndChecked) {
  gen::Rng rng(74);
  const ToyEncoderParams p = gen::encoder(rng, 5, 4, 3);
  const RowMatrix x1 = rng.rows(9, 5), x2 = rng.rows(9, 5);
  const BatchView a = forward(x1, x2, p), b = forward(x1, x2, p);
  EXPECT_EQ(a.z_fused, b.z_fused);
  EXPECT_EQ(a.source_logits, b.source_logits);
  EXPECT_THROW(forward(x1, rng.rows(8, 5), p), ContractViolation);
  EXPECT_THROW(forward(x1, rng.rows(9, 4), p), ContractViolation);
  RowMatrix bad = x1;
  bad(3, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(forward(bad, x2, p), RejectedInput);
}

TEST(Adam, FirstStepsMatchHandComputation) {
  AdamState s = make_adam(3, 0.01);
  Vector x(3), g(3);
  x << 1.0, -2.0, 0.5;
  g << 0.3, -4.0, 0.0;
  Vector m = Vector::Zero(3), v = Vector::Zero(3), ref = x;
  for (int t = 1; t <= 3; ++t) {
    adam_update(s, x, g);
    for (Index i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    EXPECT_LE((x - ref).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(s.step, t);
  }
  EXPECT_EQ(x[2], 0.5);
  EXPECT_THROW(adam_update(s, x, Vector::Zero(2)), ContractViolation);
}

TEST(Adam, PackRoundTrip) {
  gen::Rng rng(75);
  const ToyEncoderParams p = gen::encoder(rng, 4, 3, 2);
  ToyEncoderParams q = gen::encoder(rng, 4, 3, 2);
  const Vector flat = pack_adaptable(p);
  EXPECT_EQ(flat.size(), p.adaptable_size());
  EXPECT_EQ(flat.size(), 3 * 6 + 4 * 3);
  unpack_adaptable(flat, q);
  EXPECT_EQ(q.fusion, p.fusion);
  EXPECT_EQ(q.ln_shift_m2, p.ln_shift_m2);
  EXPECT_EQ(pack_adaptable(q), flat);
}

TEST(RoutedGradients, MatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const certify::Case c = certify::make_case(1000 + seed);
    const certify::Errors e = certify::gradient_errors(c);
    for (int k = 0; k < 4; ++k) EXPECT_LE(e.per_loss[k], 1e-5) << "seed " << seed << " loss " << k;
    EXPECT_LE(e.total, 1e-5) << "seed " << seed;
  }
}

TEST(RoutedGradients, LossValuesMatchOracles) {
  const certify::Case c = certify::make_case(5);
  const RowMatrix& logits = c.view.source_logits;
  EXPECT_NEAR(c.routed.losses.ra, oracle::confidence_reg(logits), 1e-12);
  EXPECT_NEAR(c.routed.losses.g, oracle::alignment_loss(c.view.posterior(Perspective::Fused), logits), 1e-12);
  EXPECT_NEAR(c.routed.losses.c,
              oracle::infonce(c.view.z_m1, c.view.z_m2, c.view.z_m1, c.view.z_m2, c.partition.anchors(),
                              c.config.tau),
              1e-10);
  const AdaptationConfig& w = c.config;
  EXPECT_NEAR(c.routed.losses.total,
              w.w_ra * c.routed.losses.ra + w.w_bal * c.routed.losses.bal + w.w_c * c.routed.losses.c +
                  w.w_g * c.routed.losses.g,
              1e-12);
}

TEST(RoutedGradients, RoutingIsExact) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const certify::Case c = certify::make_case(2000 + seed, 1 + seed % 12);
    EXPECT_TRUE(certify::routing_is_exact(c)) << "seed " << seed;
    EXPECT_TRUE(certify::routing_is_exact(certify::with_all_anchors(c, AnchorSide::M1)));
    EXPECT_TRUE(certify::routing_is_exact(certify::with_all_anchors(c, AnchorSide::M2)));
  }
}

TEST(RoutedGradients, AllAnchorsOnModalityTwoLeaveModalityOneAlone) {
  const certify::Case c = certify::with_all_anchors(certify::make_case(9), AnchorSide::M2);
  const ParamGrads& g = c.routed.total;
  EXPECT_TRUE(certify::all_zero(g.ln_scale_m1));
  EXPECT_TRUE(certify::all_zero(g.ln_shift_m1));
  EXPECT_FALSE(certify::all_zero(g.ln_scale_m2));
}

TEST(RoutedGradients, NonFiniteLossIsNamed) {
  certify::Case c = certify::make_case(11);
  c.config.tau = 1e-310;
  try {
    routed_gradients(c.view, c.cache, c.partition, c.params, c.config);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("loss_c"), std::string::npos) << e.what();
  }
}

TEST(Step, SymmetricBatchAnchorsModalityTwoAndFreezesModalityOne) {
  AdaptationConfig cfg = small_config();
  cfg.w_c = 0.5;
  AdaptationState state = prepare_source_model(small_source(), cfg);
  state.params.proj_m2 = state.params.proj_m1;
  state.params.ln_scale_m2 = state.params.ln_scale_m1;
  state.params.ln_shift_m2 = state.params.ln_shift_m1;
  auto samples = target_stream(16);
  for (Sample& s : samples) s.x_m2 = s.x_m1;
  const RawBatch batch = make_batch(samples);
  const ToyEncoderParams before = state.params;

  const BatchMetrics m = step(batch, state, cfg, 0);
  EXPECT_EQ(m.n_m1, 0u);
  EXPECT_EQ(m.n_m2, 16u);
  EXPECT_EQ(state.params.ln_scale_m1, before.ln_scale_m1);
  EXPECT_EQ(state.params.ln_shift_m1, before.ln_shift_m1);
  EXPECT_NE(state.params.ln_scale_m2, before.ln_scale_m2);
}

TEST(Step, NullObjectiveLeavesParametersAndPredictsLikeSource) {
  AdaptationConfig cfg = small_config();
  cfg.lambda = 0.0;
  cfg.w_c = cfg.w_g = cfg.w_ra = cfg.w_bal = 0.0;
  AdaptationState state = prepare_source_model(small_source(), cfg);
  const Vector before = pack_adaptable(state.params);
  const auto samples = target_stream(100, {CorruptionTarget::M1, CorruptionKind::AdditiveGaussian, 1.0});
  VectorSource src(samples);
  const RunReport r = run_stream(src, state, cfg);
  EXPECT_EQ(pack_adaptable(r.final_state.params), before);
  for (const BatchMetrics& m : r.batches) EXPECT_EQ(m.correct_fused, m.correct_source);
  EXPECT_EQ(r.aggregates.acc_fused, r.aggregates.acc_source);
}

TEST(Step, MetricsUsePreUpdatePredictions) {
  AdaptationConfig cfg = small_config();
  cfg.lr = 0.5;  // large enough that a post-update evaluation would differ
  AdaptationState state = prepare_source_model(small_source(), cfg);
  const auto samples = target_stream(32, {CorruptionTarget::M1, CorruptionKind::AdditiveGaussian, 2.0});
  const RawBatch batch = make_batch(samples);

  BatchView pre = forward(batch.x_m1, batch.x_m2, state.params);
  score_views(pre, state.models);
  const auto expect_fused = argmax_rows(fused_logits(pre.source_logits, pre.scores(Perspective::Fused), cfg.lambda));
  const auto expect_src = argmax_rows(pre.source_logits);
  std::uint64_t fused = 0, src = 0;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    fused += expect_fused[i] == batch.labels[i];
    src += expect_src[i] == batch.labels[i];
  }
  const BatchMetrics m = step(batch, state, cfg, 0);
  EXPECT_EQ(m.correct_fused, fused);
  EXPECT_EQ(m.correct_source, src);
  EXPECT_NE(pack_adaptable(state.params), pack_adaptable(prepare_source_model(small_source(), cfg).params));
}

TEST(RunStream, EmptyStreamKeepsInitialization) {
  const AdaptationConfig cfg = small_config();
  const AdaptationState state = prepare_source_model(small_source(), cfg);
  const std::vector<Sample> none;
  VectorSource src(none);
  const RunReport r = run_stream(src, state, cfg);
  EXPECT_TRUE(r.batches.empty());
  EXPECT_EQ(r.aggregates.batches, 0u);
  EXPECT_EQ(r.aggregates.acc_fused, 0.0);
  for (int p = 0; p < 3; ++p) expect_same_bank(r.final_state.models[p].bank, state.models[p].bank);
}

TEST(RunStream, SinglePassWithRaggedTail) {
  const AdaptationConfig cfg = small_config();
  const AdaptationState state = prepare_source_model(small_source(), cfg);
  const auto samples = target_stream(53);
  VectorSource src(samples);
  std::uint64_t seen = 0;
  const RunReport r = run_stream(src, state, cfg, [&](const BatchMetrics& m) { seen += m.size; });
  EXPECT_EQ(src.samples_read(), 53u);
  EXPECT_EQ(seen, 53u);
  ASSERT_EQ(r.batches.size(), 4u);
  EXPECT_EQ(r.batches.back().size, 5u);
  EXPECT_EQ(r.aggregates.samples, 53u);
  EXPECT_EQ(r.aggregates.n_m1 + r.aggregates.n_m2, 53u);
  std::uint64_t correct = 0;
  for (const BatchMetrics& m : r.batches) correct += m.correct_fused;
  EXPECT_DOUBLE_EQ(r.aggregates.acc_fused, static_cast<double>(correct) / 53.0);
}

TEST(RunStream, DeterministicAndFrozenPartsStable) {
  const AdaptationConfig cfg = small_config();
  const AdaptationState state = prepare_source_model(small_source(), cfg);
  const auto samples = target_stream(120, {CorruptionTarget::M1, CorruptionKind::AdditiveGaussian, 1.5});
  VectorSource a(samples), b(samples);
  const RunReport ra = run_stream(a, state, cfg), rb = run_stream(b, state, cfg);
  ASSERT_EQ(ra.batches.size(), rb.batches.size());
  for (std::size_t i = 0; i < ra.batches.size(); ++i) {
    EXPECT_EQ(ra.batches[i].losses.total, rb.batches[i].losses.total);
    EXPECT_EQ(ra.batches[i].correct_fused, rb.batches[i].correct_fused);
    EXPECT_EQ(ra.batches[i].n_m1, rb.batches[i].n_m1);
  }
  EXPECT_EQ(pack_adaptable(ra.final_state.params), pack_adaptable(rb.final_state.params));

  const ToyEncoderParams& f = ra.final_state.params;
  EXPECT_EQ(f.proj_m1, state.params.proj_m1);
  EXPECT_EQ(f.proj_m2, state.params.proj_m2);
  EXPECT_EQ(f.head.weights, state.params.head.weights);
  EXPECT_EQ(f.head.biases, state.params.head.biases);
  EXPECT_TRUE(pack_adaptable(f).allFinite());
  EXPECT_NE(pack_adaptable(f), pack_adaptable(state.params));
}

TEST(Setup, EncoderIsSeededAndHeadFitsSource) {
  const AdaptationConfig cfg = small_config();
  const AdaptationState a = prepare_source_model(small_source(), cfg);
  const AdaptationState b = prepare_source_model(small_source(), cfg);
  EXPECT_EQ(a.params.proj_m1, b.params.proj_m1);
  EXPECT_EQ(a.params.head.weights, b.params.head.weights);

  ScenarioSpec clean = small_source(123);
  clean.samples = 400;
  const RawBatch batch = make_batch(generate(clean));
  const BatchView v = forward(batch.x_m1, batch.x_m2, a.params);
  EXPECT_GT(accuracy(argmax_rows(v.source_logits), batch.labels), 0.8);

  ScenarioSpec corrupted = small_source();
  corrupted.corruption = {CorruptionTarget::M2, CorruptionKind::Scale, 1.0};
  EXPECT_THROW(prepare_source_model(corrupted, cfg), ValidationError);
  AdaptationConfig bad = cfg;
  bad.alpha = 1.0;
  EXPECT_THROW(prepare_source_model(small_source(), bad), ValidationError);
}
