#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctxtune/agents.hpp"
#include "ctxtune/rng.hpp"
#include "oracles.hpp"

using namespace ctxtune;

namespace {

DdpgConfig pendulum_ddpg_cfg(std::uint64_t seed, long warmup = 0, double noise = 0.1) {
  DdpgConfig c;
  c.obs_dim = 3;
  c.action_dim = 1;
  c.action_low = -2.0;
  c.action_high = 2.0;
  c.hidden_width = 16;
  c.warmup_steps = warmup;
  c.noise_scale = noise;
  c.seed = seed;
  return c;
}

PpoConfig tiny_ppo_cfg(std::uint64_t seed, int rollout, int minibatch, int epochs) {
  PpoConfig c;
  c.obs_dim = 3;
  c.action_count = 2;
  c.hidden_width = 8;
  c.rollout_steps = rollout;
  c.minibatch_size = minibatch;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

Eigen::VectorXd rand_obs(Rng& rng, int n = 3) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// soft_update / compute_gae

TEST_CASE("soft update endpoints and midpoint") {
  Mlp online = Mlp::create({2, 2}, Activation::Tanh, Activation::Identity, 1);
  Mlp target = Mlp::create({2, 2}, Activation::Tanh, Activation::Identity, 2);

  Mlp t0 = target;
  soft_update(online, t0, 0.0);
  CHECK(t0.serialize() == target.serialize());

  Mlp t1 = target;
  soft_update(online, t1, 1.0);
  CHECK(t1.serialize() == online.serialize());

  Mlp mid = target;
  mid.weight(0).setConstant(1.0);
  Mlp from = online;
  from.weight(0).setConstant(3.0);
  soft_update(from, mid, 0.5);
  CHECK(mid.weight(0)(0, 0) == doctest::Approx(2.0).epsilon(1e-15));

  CHECK_THROWS_AS(soft_update(online, target, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(soft_update(online, target, 1.1), std::invalid_argument);
}

TEST_CASE("iterated soft updates converge geometrically") {
  Mlp online = Mlp::create({3, 3}, Activation::Tanh, Activation::Identity, 3);
  Mlp target = Mlp::create({3, 3}, Activation::Tanh, Activation::Identity, 4);
  const double tau = 0.25;
  double prev = (target.weight(0) - online.weight(0)).norm();
  for (int i = 0; i < 10; ++i) {
    soft_update(online, target, tau);
    const double cur = (target.weight(0) - online.weight(0)).norm();
    CHECK(cur == doctest::Approx(prev * (1.0 - tau)).epsilon(1e-10));
    prev = cur;
  }
}

TEST_CASE("gae with lambda=0 reduces to one-step TD errors") {
  Eigen::VectorXd r(4), v(4), d(4);
  r << 1, 2, 3, 4;
  v << 0.5, 0.25, -0.5, 1.0;
  d << 0, 0, 1, 0;
  const auto [adv, ret] = compute_gae(r, v, d, 2.0, 0.9, 0.0);
  for (int t = 0; t < 4; ++t) {
    const double next_v = t + 1 < 4 ? v[t + 1] : 2.0;
    const double delta = r[t] + 0.9 * (1.0 - d[t]) * next_v - v[t];
    CHECK(adv[t] == doctest::Approx(delta).epsilon(1e-15));
    CHECK(ret[t] == doctest::Approx(delta + v[t]).epsilon(1e-15));
  }
}

TEST_CASE("gae on a one-step terminated episode") {
  Eigen::VectorXd r(1), v(1), d(1);
  r << 5.0;
  v << 1.5;
  d << 1;
  const auto [adv, ret] = compute_gae(r, v, d, 123.0, 0.99, 0.95);
  CHECK(adv[0] == doctest::Approx(5.0 - 1.5).epsilon(1e-15));
}

TEST_CASE("gae matches the brute-force oracle on 1000 random episodes") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(16));
    Eigen::VectorXd r(n), v(n), d(n);
    for (int t = 0; t < n; ++t) {
      r[t] = rng.normal(0.0, 2.0);
      v[t] = rng.normal(0.0, 1.0);
      d[t] = rng.uniform() < 0.15 ? 1.0 : 0.0;
    }
    const double last_v = rng.normal();
    double gamma = rng.uniform(0.8, 0.999);
    double lambda = rng.uniform(0.0, 1.0);
    if (trial % 3 == 0) lambda = 0.0;
    if (trial % 3 == 1) lambda = 1.0;

    const auto [adv, ret] = compute_gae(r, v, d, last_v, gamma, lambda);
    const Eigen::VectorXd want = oracles::brute_force_gae(r, v, d, last_v, gamma, lambda);
    for (int t = 0; t < n; ++t) {
      CHECK(std::abs(adv[t] - want[t]) <= 1e-10);
      CHECK(std::abs(ret[t] - (want[t] + v[t])) <= 1e-10);
    }
  }
}

TEST_CASE("gae rejects mismatched lengths") {
  CHECK_THROWS_AS(compute_gae(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2),
                              Eigen::VectorXd::Zero(3), 0.0, 0.9, 0.9),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// DDPG

TEST_CASE("zero exploration noise reproduces the deterministic action") {
  DdpgAgent agent(pendulum_ddpg_cfg(5, /*warmup=*/0, /*noise=*/0.0));
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd obs = rand_obs(rng);
    const auto a = std::get<Eigen::VectorXd>(agent.act(obs));
    const auto b = std::get<Eigen::VectorXd>(agent.act_deterministic(obs));
    CHECK(a == b);
  }
}

TEST_CASE("noisy actions always stay inside the box") {
  DdpgAgent agent(pendulum_ddpg_cfg(7, 0, /*noise=*/50.0));
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto a = std::get<Eigen::VectorXd>(agent.act(rand_obs(rng)));
    CHECK(a[0] >= -2.0);
    CHECK(a[0] <= 2.0);
  }
}

TEST_CASE("a fixed seed stream reproduces the action sequence") {
  DdpgAgent a(pendulum_ddpg_cfg(9)), b(pendulum_ddpg_cfg(9));
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd obs = rand_obs(rng);
    CHECK(std::get<Eigen::VectorXd>(a.act(obs)) == std::get<Eigen::VectorXd>(b.act(obs)));
  }
}

TEST_CASE("terminal transitions regress the critic to the raw reward") {
  DdpgAgent agent(pendulum_ddpg_cfg(11));
  Rng rng(12);
  ReplayBuffer::Batch batch;
  const int n = 6;
  batch.obs.resize(3, n);
  batch.actions.resize(1, n);
  batch.next_obs.resize(3, n);
  batch.rewards.resize(n);
  batch.dones.resize(n);
  for (int i = 0; i < n; ++i) {
    batch.obs.col(i) = rand_obs(rng);
    batch.actions(0, i) = rng.uniform(-2.0, 2.0);
    batch.next_obs.col(i) = rand_obs(rng);
    batch.rewards[i] = rng.normal();
    batch.dones[i] = 1.0;
  }
  const DdpgDiagnostics diag = agent.update(batch);
  for (int i = 0; i < n; ++i) CHECK(diag.critic_target[i] == batch.rewards[i]);
}

TEST_CASE("critic target matches a hand computation through the frozen targets") {
  DdpgAgent agent(pendulum_ddpg_cfg(13));
  agent.set_hyperparams(HyperDdpg{1e-3, 0.8, 0.005});
  Rng rng(14);
  ReplayBuffer::Batch batch;
  batch.obs.resize(3, 1);
  batch.actions.resize(1, 1);
  batch.next_obs.resize(3, 1);
  batch.rewards.resize(1);
  batch.dones.resize(1);
  batch.obs.col(0) = rand_obs(rng);
  batch.actions(0, 0) = 0.5;
  batch.next_obs.col(0) = rand_obs(rng);
  batch.rewards[0] = 1.25;
  batch.dones[0] = 0.0;

  // Hand evaluation through the frozen target networks.
  const Eigen::VectorXd tanh_a = agent.actor_target().forward(Eigen::VectorXd(batch.next_obs.col(0)));
  Eigen::VectorXd sa(4);
  sa.head(3) = batch.next_obs.col(0);
  sa[3] = 2.0 * tanh_a[0];
  const double q_next = agent.critic_target().forward(sa)[0];
  const double expected = 1.25 + 0.8 * q_next;

  const DdpgDiagnostics diag = agent.update(batch);
  CHECK(diag.critic_target[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ddpg update rejects an empty batch") {
  DdpgAgent agent(pendulum_ddpg_cfg(15));
  ReplayBuffer::Batch batch;
  batch.obs.resize(3, 0);
  batch.actions.resize(1, 0);
  batch.next_obs.resize(3, 0);
  batch.rewards.resize(0);
  batch.dones.resize(0);
  CHECK_THROWS_AS(agent.update(batch), std::invalid_argument);
}

TEST_CASE("tau = 1 copies the online networks into the targets") {
  DdpgAgent agent(pendulum_ddpg_cfg(16));
  agent.set_hyperparams(HyperDdpg{1e-3, 0.9, 0.99});
  Rng rng(17);
  ReplayBuffer::Batch batch;
  const int n = 4;
  batch.obs.resize(3, n);
  batch.actions.resize(1, n);
  batch.next_obs.resize(3, n);
  batch.rewards.resize(n);
  batch.dones.setZero(n);
  for (int i = 0; i < n; ++i) {
    batch.obs.col(i) = rand_obs(rng);
    batch.actions(0, i) = 0.1;
    batch.next_obs.col(i) = rand_obs(rng);
    batch.rewards[i] = 0.5;
  }
  agent.update(batch);
  // tau 0.99 pulls targets almost onto the online nets after a few updates.
  for (int k = 0; k < 5; ++k) agent.update(batch);
  CHECK((agent.actor().weight(0) - agent.actor_target().weight(0)).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("ddpg hyperparameters round-trip and validate") {
  DdpgAgent agent(pendulum_ddpg_cfg(18));
  Eigen::VectorXd hp(3);
  hp << 0.001, 0.95, 0.01;
  agent.set_hyperparams(hp);
  CHECK(agent.hyperparams() == hp);
  Eigen::VectorXd bad = hp;
  bad[0] = 0.5;  // above the lr bound
  CHECK_THROWS_AS(agent.set_hyperparams(bad), std::invalid_argument);
}

TEST_CASE("ddpg state blob round-trips byte-for-byte") {
  DdpgAgent a(pendulum_ddpg_cfg(19));
  const std::string blob = a.save_state();
  DdpgAgent b(pendulum_ddpg_cfg(20));
  CHECK(b.save_state() != blob);
  b.load_state(blob);
  CHECK(b.save_state() == blob);
}

// ---------------------------------------------------------------------------
// PPO

namespace {

// Builds a rollout whose log-probs/values are taken from the agent's own
// networks, i.e. a "fresh" rollout with ratio exactly 1.
RolloutBuffer fresh_rollout(PpoAgent& agent, Rng& rng, int steps) {
  RolloutBuffer rb;
  rb.reset(agent.config().obs_dim, steps);
  for (int i = 0; i < steps; ++i) {
    const Eigen::VectorXd obs = rand_obs(rng, agent.config().obs_dim);
    const Eigen::VectorXd logits = agent.policy().forward(obs);
    const Eigen::VectorXd logp = PpoAgent::log_softmax(logits);
    const int action = static_cast<int>(rng.uniform_int(agent.config().action_count));
    rb.obs.col(i) = obs;
    rb.actions[static_cast<std::size_t>(i)] = action;
    rb.log_probs[i] = logp[action];
    rb.values[i] = agent.value().forward(obs)[0];
    rb.rewards[i] = rng.normal();
    rb.dones[i] = 0.0;
    ++rb.filled;
  }
  return rb;
}

}  // namespace

TEST_CASE("fresh rollout: ratio one, surrogate equals the mean advantage") {
  PpoAgent agent(tiny_ppo_cfg(21, 8, 8, 1));
  HyperPpo hp;
  hp.learning_rate = 1e-5;
  hp.ent_coef = 0.0;
  hp.vf_coef = 0.0;
  agent.set_hyperparams(hp);
  Rng rng(22);
  const RolloutBuffer rb = fresh_rollout(agent, rng, 8);
  const PpoDiagnostics diag = agent.update(rb, 0.0);
  // Normalized advantages have mean zero, so with ratio = 1 the clipped and
  // unclipped branches coincide and the surrogate is (minus) that mean.
  CHECK(std::abs(diag.policy_loss) <= 1e-9);
}

TEST_CASE("saturated clipping kills the policy gradient") {
  PpoAgent agent(tiny_ppo_cfg(23, 4, 4, 1));
  HyperPpo hp;
  hp.ent_coef = 0.0;
  hp.vf_coef = 0.0;
  agent.set_hyperparams(hp);
  Rng rng(24);
  RolloutBuffer rb = fresh_rollout(agent, rng, 4);
  // Raw advantages [+,+,-,-]: values 0, terminated steps, reward = advantage.
  rb.values.setZero();
  rb.dones.setOnes();
  rb.rewards << 1.0, 1.0, -1.0, -1.0;
  // Positive-advantage samples pushed above 1 + clip, negative ones below
  // 1 - clip: every sample sits in the saturated branch.
  rb.log_probs[0] -= std::log(1.3);
  rb.log_probs[1] -= std::log(1.3);
  rb.log_probs[2] -= std::log(0.7);
  rb.log_probs[3] -= std::log(0.7);

  const std::string policy_before = agent.policy().serialize();
  const std::string value_before = agent.value().serialize();
  agent.update(rb, 0.0);
  CHECK(agent.policy().serialize() == policy_before);
  CHECK(agent.value().serialize() == value_before);
}

TEST_CASE("tiny rollout loss matches an independent scalar evaluation") {
  PpoAgent agent(tiny_ppo_cfg(25, 4, 4, 1));
  HyperPpo hp;
  hp.learning_rate = 1e-5;
  hp.gamma = 0.9;
  hp.gae_lambda = 0.8;
  hp.ent_coef = 0.1;
  hp.vf_coef = 0.5;
  agent.set_hyperparams(hp);
  Rng rng(26);
  RolloutBuffer rb = fresh_rollout(agent, rng, 4);
  // Perturb the stored log-probs so the ratios are not trivially 1.
  rb.log_probs[0] -= 0.05;
  rb.log_probs[2] += 0.08;
  const double last_value = 0.3;

  // Independent evaluation of the three-term objective.
  const Eigen::VectorXd adv_raw =
      oracles::brute_force_gae(rb.rewards, rb.values, rb.dones, last_value, hp.gamma,
                               hp.gae_lambda);
  const double mean = adv_raw.mean();
  const double sd = std::sqrt((adv_raw.array() - mean).square().mean());
  const Eigen::VectorXd adv = (adv_raw.array() - mean) / (sd + 1e-8);
  const Eigen::VectorXd returns = adv_raw + rb.values;

  double policy_loss = 0.0, entropy = 0.0, value_loss = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Eigen::VectorXd logits = agent.policy().forward(Eigen::VectorXd(rb.obs.col(i)));
    const Eigen::VectorXd logp = PpoAgent::log_softmax(logits);
    const Eigen::VectorXd p = logp.array().exp();
    const int a = rb.actions[static_cast<std::size_t>(i)];
    const double ratio = std::exp(logp[a] - rb.log_probs[i]);
    const double s1 = ratio * adv[i];
    const double s2 = std::clamp(ratio, 0.8, 1.2) * adv[i];
    policy_loss += -std::min(s1, s2) / 4.0;
    entropy += -(p.array() * logp.array()).sum() / 4.0;
    const double v = agent.value().forward(Eigen::VectorXd(rb.obs.col(i)))[0];
    value_loss += (v - returns[i]) * (v - returns[i]) / 4.0;
  }

  const PpoDiagnostics diag = agent.update(rb, last_value);
  CHECK(diag.policy_loss == doctest::Approx(policy_loss).epsilon(1e-10));
  CHECK(diag.entropy == doctest::Approx(entropy).epsilon(1e-10));
  CHECK(diag.value_loss == doctest::Approx(value_loss).epsilon(1e-10));
  CHECK(diag.minibatches == 1);
}

TEST_CASE("gradients respect max_grad_norm before the optimizer step") {
  PpoAgent agent(tiny_ppo_cfg(27, 64, 16, 2));
  HyperPpo hp;
  hp.max_grad_norm = 0.05;
  hp.ent_coef = 0.1;
  agent.set_hyperparams(hp);
  Rng rng(28);
  RolloutBuffer rb = fresh_rollout(agent, rng, 64);
  for (int i = 0; i < 64; ++i) rb.rewards[i] = rng.normal(0.0, 5.0);
  const PpoDiagnostics diag = agent.update(rb, 0.0);
  CHECK(diag.max_post_clip_grad_norm <= 0.05 + 1e-9);
  CHECK(diag.max_pre_clip_grad_norm >= diag.max_post_clip_grad_norm);
}

TEST_CASE("a gamma change is picked up by the next advantage computation") {
  PpoAgent agent(tiny_ppo_cfg(29, 6, 6, 1));
  Rng rng(30);
  RolloutBuffer rb = fresh_rollout(agent, rng, 6);
  const double last_value = -0.2;

  HyperPpo hp;
  hp.gamma = 0.85;
  hp.gae_lambda = 0.9;
  agent.set_hyperparams(hp);
  const PpoDiagnostics diag = agent.update(rb, last_value);
  const Eigen::VectorXd want =
      oracles::brute_force_gae(rb.rewards, rb.values, rb.dones, last_value, 0.85, 0.9);
  for (int t = 0; t < 6; ++t) CHECK(diag.advantages[t] == doctest::Approx(want[t]).epsilon(1e-10));
}

TEST_CASE("ppo update rejects an empty rollout") {
  PpoAgent agent(tiny_ppo_cfg(31, 4, 4, 1));
  RolloutBuffer rb;
  rb.reset(3, 4);
  CHECK_THROWS_AS(agent.update(rb, 0.0), std::invalid_argument);
}

TEST_CASE("ppo hyperparameters round-trip and validate") {
  PpoAgent agent(tiny_ppo_cfg(32, 4, 4, 1));
  Eigen::VectorXd hp(6);
  hp << 3e-4, 0.98, 0.01, 0.6, 0.7, 0.92;
  agent.set_hyperparams(hp);
  CHECK(agent.hyperparams() == hp);
  Eigen::VectorXd bad = hp;
  bad[2] = 0.9;  // ent_coef above 0.5
  CHECK_THROWS_AS(agent.set_hyperparams(bad), std::invalid_argument);
}

TEST_CASE("ppo agents with the same seed act identically") {
  PpoAgent a(tiny_ppo_cfg(33, 16, 8, 2)), b(tiny_ppo_cfg(33, 16, 8, 2));
  Rng rng(34);
  for (int i = 0; i < 30; ++i) {
    const Eigen::VectorXd obs = rand_obs(rng);
    CHECK(std::get<int>(a.act(obs)) == std::get<int>(b.act(obs)));
  }
  CHECK(a.save_state() == b.save_state());
}

TEST_CASE("ppo state blob round-trips byte-for-byte") {
  PpoAgent a(tiny_ppo_cfg(35, 8, 8, 1));
  const std::string blob = a.save_state();
  PpoAgent b(tiny_ppo_cfg(36, 8, 8, 1));
  b.load_state(blob);
  CHECK(b.save_state() == blob);
}

TEST_CASE("replay buffer enforces its sampling precondition") {
  ReplayBuffer buf(16);
  Rng rng(37);
  CHECK_THROWS_AS(buf.sample(1, rng), std::invalid_argument);
  Eigen::VectorXd o(2), a(1);
  o << 1, 2;
  a << 0.5;
  for (int i = 0; i < 20; ++i) buf.push(o, a, 1.0, o, false);
  CHECK(buf.size() == 16);  // FIFO eviction at capacity
  const ReplayBuffer::Batch batch = buf.sample(8, rng);
  CHECK(batch.size() == 8);
}
