#include "smoothrl/ddpg.hpp"

#include <gtest/gtest.h>

using namespace smoothrl;

namespace {

Mlp random_mlp(std::vector<int> sizes, std::uint64_t seed) {
  Mlp net(std::move(sizes));
  Rng rng(seed);
  net.init_uniform(rng);
  return net;
}

Transition make_transition(double tag, bool done = false) {
  Transition t;
  t.s = Vec::Constant(3, tag);
  t.a = Vec::Constant(2, tag);
  t.r = tag;
  t.s_next = Vec::Constant(3, tag + 0.5);
  t.done = done;
  return t;
}

MiniBatch random_minibatch(int sdim, int adim, int n, std::uint64_t seed) {
  Rng rng(seed);
  MiniBatch b;
  b.s.resize(sdim, n);
  b.a.resize(adim, n);
  b.s_next.resize(sdim, n);
  b.r.resize(n);
  b.done = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    b.s.col(i) = rng.uniform_vec(sdim, -1.0, 1.0);
    b.a.col(i) = rng.uniform_vec(adim, -1.0, 1.0);
    b.s_next.col(i) = rng.uniform_vec(sdim, -1.0, 1.0);
    b.r[i] = rng.uniform(-1.0, 1.0);
  }
  return b;
}

}  // namespace

TEST(ReplayBuffer, EvictsOldestAtCapacity) {
  ReplayBuffer buf(2);
  buf.push(make_transition(1.0));
  buf.push(make_transition(2.0));
  buf.push(make_transition(3.0));
  EXPECT_EQ(buf.size(), 2u);
  std::vector<double> tags{buf.at(0).r, buf.at(1).r};
  std::sort(tags.begin(), tags.end());
  EXPECT_DOUBLE_EQ(tags[0], 2.0);
  EXPECT_DOUBLE_EQ(tags[1], 3.0);
}

TEST(ReplayBuffer, SizeTracksPushesBelowCapacity) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 7; ++i) buf.push(make_transition(i));
  EXPECT_EQ(buf.size(), 7u);
  EXPECT_EQ(buf.capacity(), 10u);
}

TEST(ReplayBuffer, EvictionFollowsInsertionOrder) {
  ReplayBuffer buf(3);
  for (int i = 0; i < 7; ++i) buf.push(make_transition(i));
  // After 7 pushes into capacity 3, the survivors are 4, 5, 6.
  std::vector<double> tags;
  for (size_t i = 0; i < buf.size(); ++i) tags.push_back(buf.at(i).r);
  std::sort(tags.begin(), tags.end());
  EXPECT_DOUBLE_EQ(tags[0], 4.0);
  EXPECT_DOUBLE_EQ(tags[2], 6.0);
}

TEST(ReplayBuffer, SamplingIsUniformWithReplacement) {
  ReplayBuffer buf(16);
  for (int i = 0; i < 10; ++i) buf.push(make_transition(i));
  Rng rng(1);
  std::vector<int> counts(10, 0);
  const int total = 100000;
  const int per_call = 10;
  for (int k = 0; k < total / per_call; ++k) {
    const MiniBatch b = buf.sample(per_call, rng);
    for (int i = 0; i < per_call; ++i) ++counts[static_cast<int>(b.r[i])];
  }
  const double p = 0.1;
  const double sigma = std::sqrt(total * p * (1.0 - p));
  for (int i = 0; i < 10; ++i) {
    ASSERT_LE(std::abs(counts[i] - total * p), 3.0 * sigma) << "item " << i;
  }
}

TEST(ReplayBuffer, SampleRequiresEnoughItems) {
  ReplayBuffer buf(8);
  buf.push(make_transition(0.0));
  Rng rng(2);
  EXPECT_THROW(buf.sample(2, rng), std::runtime_error);
}

TEST(CriticTarget, GammaZeroGivesRewards) {
  QNet q(random_mlp({5, 4, 1}, 3));
  DeterministicPolicy pol(random_mlp({3, 4, 2}, 4), Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  const MiniBatch b = random_minibatch(3, 2, 6, 5);
  const Vec y = critic_target(b, q, pol, 0.0);
  EXPECT_LT((y - b.r).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(CriticTarget, TerminalTransitionsIgnoreBootstrap) {
  QNet q(random_mlp({5, 4, 1}, 6));
  DeterministicPolicy pol(random_mlp({3, 4, 2}, 7), Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  MiniBatch b = random_minibatch(3, 2, 4, 8);
  b.done.setOnes();
  const Vec y = critic_target(b, q, pol, 0.99);
  EXPECT_LT((y - b.r).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(CriticTarget, ArithmeticExample) {
  // Constant critic Q' = 2 (zero weights, output bias 2): y = 1 + 0.9 * 2.
  Mlp qnet({5, 1});
  qnet.biases(0)[0] = 2.0;
  QNet q(qnet);
  DeterministicPolicy pol(Mlp({3, 2}), Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  MiniBatch b = random_minibatch(3, 2, 1, 9);
  b.r[0] = 1.0;
  b.done[0] = 0.0;
  const Vec y = critic_target(b, q, pol, 0.9);
  EXPECT_DOUBLE_EQ(y[0], 2.8);
}

TEST(CriticUpdate, ExactCriticHasZeroGradient) {
  QNet q(random_mlp({5, 6, 1}, 10));
  const MiniBatch b = random_minibatch(3, 2, 8, 11);
  const Vec y = q.q_batch(b.s, b.a);  // targets equal predictions
  const Vec before = q.net().params();
  const UpdateResult res = critic_update(q, b, y, 1e-2, 0.0, nullptr);
  EXPECT_TRUE(res.applied);
  EXPECT_DOUBLE_EQ(res.loss, 0.0);
  const Vec after = q.net().params();
  for (int i = 0; i < before.size(); ++i) ASSERT_EQ(before[i], after[i]);
}

TEST(CriticUpdate, LossIsReportedPreStep) {
  QNet q(random_mlp({5, 6, 1}, 12));
  const MiniBatch b = random_minibatch(3, 2, 8, 13);
  Vec y = q.q_batch(b.s, b.a);
  y.array() += 1.0;  // constant offset: pre-step MSE is exactly 1
  const UpdateResult res = critic_update(q, b, y, 1e-3, 0.0, nullptr);
  EXPECT_NEAR(res.loss, 1.0, 1e-12);
}

TEST(CriticUpdate, RegularizedGradientMatchesFiniteDifferences) {
  QNet q(random_mlp({4, 5, 1}, 14));
  const MiniBatch b = random_minibatch(2, 2, 6, 15);
  Rng adv_rng(16);
  const Mat s_hat = inner_max_q_batch(q, b.s, b.a, PerturbationBall{0.1}, AdversaryConfig{}, adv_rng);
  Rng yr(17);
  Vec y = yr.uniform_vec(6, -1.0, 1.0);

  const double lambda = 0.7;
  const double eta = 1e-3;
  const Vec phi0 = q.net().params();
  QNet stepped = q;
  critic_update(stepped, b, y, eta, lambda, &s_hat);
  const Vec analytic = (phi0 - stepped.net().params()) / eta;  // descent step recovers the gradient

  auto loss_fn = [&](const Vec& phi) {
    Mlp net = q.net();
    net.set_params(phi);
    QNet qq(net);
    const Vec qv = qq.q_batch(b.s, b.a);
    const Vec qh = qq.q_batch(s_hat, b.a);
    return (qv - y).array().square().mean() + lambda * (qv - qh).array().square().mean();
  };
  const Vec numeric = numeric_gradient(loss_fn, phi0, 1e-6);
  EXPECT_LT(max_rel_error(analytic, numeric), 1e-4);
}

TEST(ActorUpdate, CriticConstantInActionGivesZeroGradient) {
  // Zero out the first-layer columns that read the action: Q is independent
  // of a, so the deterministic policy gradient vanishes.
  Mlp qnet = random_mlp({5, 6, 1}, 18);
  qnet.weights(0).rightCols(2).setZero();
  QNet q(qnet);
  DeterministicPolicy actor(random_mlp({3, 4, 2}, 19), Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  const MiniBatch b = random_minibatch(3, 2, 8, 20);
  const Vec before = actor.net().params();
  actor_update(actor, q, b, 1e-2, 0.0, nullptr);
  const Vec after = actor.net().params();
  for (int i = 0; i < before.size(); ++i) ASSERT_EQ(before[i], after[i]);
}

TEST(ActorUpdate, ObjectiveGradientMatchesFiniteDifferences) {
  QNet q(random_mlp({4, 6, 1}, 21));
  DeterministicPolicy actor(random_mlp({2, 5, 2}, 22), Vec::Constant(2, -10.0), Vec::Constant(2, 10.0));
  const MiniBatch b = random_minibatch(2, 2, 6, 23);
  Rng adv_rng(24);
  const Mat s_hat = inner_max_deterministic_batch(actor, b.s, PerturbationBall{0.1}, AdversaryConfig{}, adv_rng);

  const double lambda = 0.5;
  const double eta = 1e-3;
  const Vec theta0 = actor.net().params();
  DeterministicPolicy stepped = actor;
  actor_update(stepped, q, b, eta, lambda, &s_hat);
  const Vec analytic = (stepped.net().params() - theta0) / eta;  // ascent step

  auto objective = [&](const Vec& theta) {
    Mlp net = actor.net();
    net.set_params(theta);
    const Mat mu = net.forward(b.s);
    const Mat mu_hat = net.forward(s_hat);
    const Vec qv = q.q_batch(b.s, mu);
    return qv.mean() - lambda * (mu - mu_hat).array().square().sum() / static_cast<double>(b.size());
  };
  const Vec numeric = numeric_gradient(objective, theta0, 1e-6);
  EXPECT_LT(max_rel_error(analytic, numeric), 1e-4);
}

TEST(ActorUpdate, BoundPenaltyMatchesFiniteDifferencesInsideBox) {
  // With wide bounds the clamp is the identity, so the penalized objective
  // coincides with the plain one and its gradient must match finite
  // differences exactly.
  QNet q(random_mlp({4, 6, 1}, 40));
  DeterministicPolicy actor(random_mlp({2, 5, 2}, 41), Vec::Constant(2, -50.0), Vec::Constant(2, 50.0));
  const MiniBatch b = random_minibatch(2, 2, 6, 42);
  const double eta = 1e-3;
  const Vec theta0 = actor.net().params();
  DeterministicPolicy stepped = actor;
  actor_update(stepped, q, b, eta, 0.0, nullptr, nullptr, /*bound_penalty=*/5.0);
  const Vec analytic = (stepped.net().params() - theta0) / eta;

  auto objective = [&](const Vec& theta) {
    Mlp net = actor.net();
    net.set_params(theta);
    const Mat mu = net.forward(b.s);
    return q.q_batch(b.s, mu).mean();
  };
  const Vec numeric = numeric_gradient(objective, theta0, 1e-5);
  EXPECT_LT(max_rel_error(analytic, numeric), 1e-4);
}

TEST(ActorUpdate, BoundPenaltyPullsOverflowingOutputBack) {
  // Saturated actor (large positive bias on the output layer) against a
  // critic that is constant in the action: the only force is the overflow
  // penalty, which must reduce the raw output.
  Mlp qnet = random_mlp({4, 6, 1}, 43);
  qnet.weights(0).rightCols(2).setZero();  // Q independent of the action
  QNet q(qnet);
  Mlp actor_net({2, 4, 2});
  actor_net.biases(1) << 3.0, -2.5;  // raw output far outside [-1, 1]
  DeterministicPolicy actor(actor_net, Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  const MiniBatch b = random_minibatch(2, 2, 8, 44);

  const Vec mu_before = actor.raw(Vec::Zero(2));
  actor_update(actor, q, b, 1e-2, 0.0, nullptr, nullptr, /*bound_penalty=*/10.0);
  const Vec mu_after = actor.raw(Vec::Zero(2));
  EXPECT_LT(mu_after[0], mu_before[0]);
  EXPECT_GT(mu_after[1], mu_before[1]);
}

TEST(OptimizerStep, AdamIsDeterministicAndBounded) {
  Mlp a = random_mlp({2, 4, 1}, 45);
  Mlp b = a;
  AdamState sa, sb;
  Rng rng(46);
  for (int k = 0; k < 5; ++k) {
    const Vec g = rng.uniform_vec(a.param_count(), -3.0, 3.0);
    optimizer_step(a, g, 1e-3, -1.0, &sa);
    optimizer_step(b, g, 1e-3, -1.0, &sb);
  }
  const Vec pa = a.params(), pb = b.params();
  for (int i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i], pb[i]);
  // Per-coordinate Adam steps are bounded by roughly eta regardless of the
  // raw gradient scale.
  Mlp c = random_mlp({2, 4, 1}, 45);
  const Vec before = c.params();
  AdamState sc;
  optimizer_step(c, Vec::Constant(c.param_count(), 1e6), 1e-3, -1.0, &sc);
  EXPECT_LT((c.params() - before).lpNorm<Eigen::Infinity>(), 1e-2);
}

TEST(Polyak, FullRateCopiesSource) {
  Mlp target({2, 3, 1});
  const Mlp source = random_mlp({2, 3, 1}, 25);
  polyak_update(target, source, 1.0);
  const Vec t = target.params(), s = source.params();
  for (int i = 0; i < t.size(); ++i) ASSERT_EQ(t[i], s[i]);
}

TEST(Polyak, HalfRateAverages) {
  Mlp target({1, 1});
  Mlp source({1, 1});
  source.weights(0)(0, 0) = 2.0;
  polyak_update(target, source, 0.5);
  EXPECT_DOUBLE_EQ(target.weights(0)(0, 0), 1.0);
}

TEST(Polyak, GeometricConvergenceToFixedSource) {
  Mlp target = random_mlp({2, 4, 1}, 26);
  const Mlp source = random_mlp({2, 4, 1}, 27);
  const double tau = 0.1;
  double dist = (target.params() - source.params()).norm();
  for (int k = 0; k < 20; ++k) {
    polyak_update(target, source, tau);
    const double next = (target.params() - source.params()).norm();
    ASSERT_NEAR(next, (1.0 - tau) * dist, 1e-12 * std::max(1.0, dist));
    dist = next;
  }
}

TEST(Polyak, TargetStaysInsideElementwiseInterval) {
  Mlp target = random_mlp({2, 4, 1}, 28);
  const Mlp source = random_mlp({2, 4, 1}, 29);
  const Vec t0 = target.params(), s = source.params();
  polyak_update(target, source, 0.3);
  const Vec t1 = target.params();
  for (int i = 0; i < t1.size(); ++i) {
    ASSERT_GE(t1[i], std::min(t0[i], s[i]) - 1e-15);
    ASSERT_LE(t1[i], std::max(t0[i], s[i]) + 1e-15);
  }
  EXPECT_THROW(polyak_update(target, source, 0.0), std::invalid_argument);
}

namespace {

DdpgConfig tiny_ddpg_config() {
  DdpgConfig cfg;
  cfg.batch_size = 8;
  cfg.capacity = 1000;
  cfg.warmup_factor = 4;
  cfg.total_steps = 400;
  cfg.eval_every = 200;
  cfg.eval_episodes = 2;
  cfg.eta_actor = 1e-3;
  cfg.eta_critic = 1e-3;
  return cfg;
}

}  // namespace

TEST(DdpgTrainer, ZeroLambdaVariantsMatchBaselineExactly) {
  auto run = [&](DdpgVariant variant) {
    DdpgConfig cfg = tiny_ddpg_config();
    cfg.variant = variant;
    cfg.lambda_s = 0.0;
    DdpgTrainer trainer(make_env("pointmass"), cfg, {8, 8}, 77);
    std::vector<double> curve;
    for (int blk = 0; blk < 2; ++blk) curve.push_back(trainer.advance_block().eval_mean);
    return std::make_pair(curve, trainer.actor().net().params());
  };
  const auto [c_none, p_none] = run(DdpgVariant::none);
  const auto [c_sra, p_sra] = run(DdpgVariant::sr_a);
  const auto [c_src, p_src] = run(DdpgVariant::sr_c);
  for (size_t i = 0; i < c_none.size(); ++i) {
    ASSERT_EQ(c_none[i], c_sra[i]);
    ASSERT_EQ(c_none[i], c_src[i]);
  }
  for (int i = 0; i < p_none.size(); ++i) {
    ASSERT_EQ(p_none[i], p_sra[i]);
    ASSERT_EQ(p_none[i], p_src[i]);
  }
}

TEST(DdpgTrainer, FixedSeedReproducesDiagnostics) {
  auto run = [&]() {
    DdpgConfig cfg = tiny_ddpg_config();
    cfg.variant = DdpgVariant::sr_a;
    cfg.lambda_s = 0.1;
    cfg.ball.epsilon = 0.02;
    DdpgTrainer trainer(make_env("pendulum"), cfg, {8, 8}, 13);
    std::vector<IterationStats> stats;
    for (int blk = 0; blk < 2; ++blk) stats.push_back(trainer.advance_block());
    return stats;
  };
  const auto a = run();
  const auto b = run();
  for (size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].eval_mean, b[i].eval_mean);
    ASSERT_EQ(a[i].reg_value, b[i].reg_value);
    ASSERT_EQ(a[i].adv_divergence, b[i].adv_divergence);
  }
}

TEST(DdpgTrainer, BufferNeverExceedsCapacityDuringTraining) {
  DdpgConfig cfg = tiny_ddpg_config();
  cfg.capacity = 64;
  DdpgTrainer trainer(make_env("pointmass"), cfg, {4, 4}, 5);
  trainer.advance_block();
  EXPECT_EQ(trainer.steps_done(), 200);
}
