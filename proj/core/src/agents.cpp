#include "ctxtune/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctxtune/errors.hpp"
#include "ctxtune/serial.hpp"

namespace ctxtune {

namespace {

void check_range(double v, double lo, double hi, const char* name) {
  if (!(v >= lo && v <= hi))
    throw std::invalid_argument(std::string(name) + " = " + std::to_string(v) +
                                " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

void HyperDdpg::validate() const {
  check_range(learning_rate, kLrLo, kLrHi, "learning_rate");
  check_range(gamma, kGammaLo, kGammaHi, "gamma");
  check_range(tau, kTauLo, kTauHi, "tau");
}

HyperDdpg HyperDdpg::from_vector(const Eigen::VectorXd& v) {
  if (v.size() != 3) throw std::invalid_argument("ddpg hyperparams: expected 3 values");
  HyperDdpg hp;
  hp.learning_rate = v[0];
  hp.gamma = v[1];
  hp.tau = v[2];
  hp.validate();
  return hp;
}

void HyperPpo::validate() const {
  check_range(learning_rate, kLrLo, kLrHi, "learning_rate");
  check_range(gamma, kGammaLo, kGammaHi, "gamma");
  check_range(ent_coef, kEntLo, kEntHi, "ent_coef");
  check_range(vf_coef, kVfLo, kVfHi, "vf_coef");
  check_range(max_grad_norm, kMgnLo, kMgnHi, "max_grad_norm");
  check_range(gae_lambda, kLambdaLo, kLambdaHi, "gae_lambda");
}

Eigen::VectorXd HyperPpo::as_vector() const {
  Eigen::VectorXd v(6);
  v << learning_rate, gamma, ent_coef, vf_coef, max_grad_norm, gae_lambda;
  return v;
}

HyperPpo HyperPpo::from_vector(const Eigen::VectorXd& v) {
  if (v.size() != 6) throw std::invalid_argument("ppo hyperparams: expected 6 values");
  HyperPpo hp;
  hp.learning_rate = v[0];
  hp.gamma = v[1];
  hp.ent_coef = v[2];
  hp.vf_coef = v[3];
  hp.max_grad_norm = v[4];
  hp.gae_lambda = v[5];
  hp.validate();
  return hp;
}

void soft_update(const Mlp& online, Mlp& target, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau must be in [0, 1]");
  for (int l = 0; l < online.layer_count(); ++l) {
    target.weight(l) = tau * online.weight(l) + (1.0 - tau) * target.weight(l);
    target.bias(l) = tau * online.bias(l) + (1.0 - tau) * target.bias(l);
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_gae(const Eigen::VectorXd& rewards,
                                                        const Eigen::VectorXd& values,
                                                        const Eigen::VectorXd& dones,
                                                        double last_value, double gamma,
                                                        double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || dones.size() != n)
    throw std::invalid_argument("compute_gae: rewards/values/dones lengths differ");
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("compute_gae: gamma and lambda must be in [0, 1]");

  Eigen::VectorXd advantages(n);
  double next_advantage = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double nonterminal = 1.0 - dones[t];
    const double next_value = t + 1 < n ? values[t + 1] : last_value;
    const double delta = rewards[t] + gamma * nonterminal * next_value - values[t];
    next_advantage = delta + gamma * lambda * nonterminal * next_advantage;
    advantages[t] = next_advantage;
  }
  return {advantages, advantages + values};
}

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("replay buffer: capacity must be > 0");
}

void ReplayBuffer::push(const Eigen::VectorXd& obs, const Eigen::VectorXd& action, double reward,
                        const Eigen::VectorXd& next_obs, bool done) {
  if (obs_.size() < capacity_) {
    obs_.push_back(obs);
    actions_.push_back(action);
    rewards_.push_back(reward);
    next_obs_.push_back(next_obs);
    dones_.push_back(done ? 1.0 : 0.0);
  } else {
    obs_[next_] = obs;
    actions_[next_] = action;
    rewards_[next_] = reward;
    next_obs_[next_] = next_obs;
    dones_[next_] = done ? 1.0 : 0.0;
    next_ = (next_ + 1) % capacity_;
  }
}

ReplayBuffer::Batch ReplayBuffer::sample(int n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("replay buffer: batch size must be >= 1");
  if (size() < static_cast<std::size_t>(n))
    throw std::invalid_argument("replay buffer: not enough transitions to sample");
  Batch b;
  const Eigen::Index obs_dim = obs_.front().size();
  const Eigen::Index act_dim = actions_.front().size();
  b.obs.resize(obs_dim, n);
  b.actions.resize(act_dim, n);
  b.next_obs.resize(obs_dim, n);
  b.rewards.resize(n);
  b.dones.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(size())));
    b.obs.col(i) = obs_[idx];
    b.actions.col(i) = actions_[idx];
    b.next_obs.col(i) = next_obs_[idx];
    b.rewards[i] = rewards_[idx];
    b.dones[i] = dones_[idx];
  }
  return b;
}

// ---------------------------------------------------------------------------
// DDPG

DdpgAgent::DdpgAgent(const DdpgConfig& cfg, HyperDdpg hp)
    : cfg_(cfg),
      hp_(hp),
      actor_(Mlp::create({cfg.obs_dim, cfg.hidden_width, cfg.hidden_width, cfg.action_dim},
                         Activation::Tanh, Activation::Tanh, derive_seed(cfg.seed, 1))),
      critic_(Mlp::create({cfg.obs_dim + cfg.action_dim, cfg.hidden_width, cfg.hidden_width, 1},
                          Activation::Tanh, Activation::Identity, derive_seed(cfg.seed, 2))),
      actor_target_(actor_),
      critic_target_(critic_),
      actor_opt_(actor_),
      critic_opt_(critic_),
      buffer_(cfg.buffer_capacity),
      rng_(derive_seed(cfg.seed, 3)) {
  hp_.validate();
  if (cfg.obs_dim < 1 || cfg.action_dim < 1) throw invalid_config("ddpg: bad dimensions");
  if (!(cfg.action_low < cfg.action_high)) throw invalid_config("ddpg: empty action box");
}

Eigen::VectorXd DdpgAgent::scale_to_box(const Eigen::VectorXd& tanh_out) const {
  const double center = 0.5 * (cfg_.action_high + cfg_.action_low);
  const double half = 0.5 * (cfg_.action_high - cfg_.action_low);
  return (tanh_out.array() * half + center).matrix();
}

ActionValue DdpgAgent::act(const Eigen::VectorXd& obs) {
  if (steps_seen_ < cfg_.warmup_steps) {
    Eigen::VectorXd a(cfg_.action_dim);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      a[i] = rng_.uniform(cfg_.action_low, cfg_.action_high);
    return a;
  }
  Eigen::VectorXd a = scale_to_box(actor_.forward(obs));
  const double sigma = cfg_.noise_scale * 0.5 * (cfg_.action_high - cfg_.action_low);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    a[i] = std::clamp(a[i] + sigma * rng_.normal(), cfg_.action_low, cfg_.action_high);
  return a;
}

ActionValue DdpgAgent::act_deterministic(const Eigen::VectorXd& obs) {
  return scale_to_box(actor_.forward(obs));
}

void DdpgAgent::observe(const Eigen::VectorXd& obs, const ActionValue& action, double reward,
                        const Eigen::VectorXd& next_obs, bool terminated, bool truncated) {
  (void)truncated;  // timeouts bootstrap; only true terminals cut the target
  const auto* a = std::get_if<Eigen::VectorXd>(&action);
  if (a == nullptr) throw std::invalid_argument("ddpg: expected a continuous action");
  buffer_.push(obs, *a, reward, next_obs, terminated);
  ++steps_seen_;
  if (steps_seen_ >= cfg_.warmup_steps && buffer_.size() >= static_cast<std::size_t>(cfg_.batch_size))
    update(buffer_.sample(cfg_.batch_size, rng_));
}

DdpgDiagnostics DdpgAgent::update(const ReplayBuffer::Batch& batch) {
  const Eigen::Index B = batch.size();
  if (B == 0) throw std::invalid_argument("ddpg update: empty batch");

  // Regression target from the frozen target networks.
  Eigen::MatrixXd next_tanh = actor_target_.forward(batch.next_obs);
  const double center = 0.5 * (cfg_.action_high + cfg_.action_low);
  const double half = 0.5 * (cfg_.action_high - cfg_.action_low);
  Eigen::MatrixXd next_sa(cfg_.obs_dim + cfg_.action_dim, B);
  next_sa.topRows(cfg_.obs_dim) = batch.next_obs;
  next_sa.bottomRows(cfg_.action_dim) = (next_tanh.array() * half + center).matrix();
  Eigen::VectorXd q_next = critic_target_.forward(next_sa).row(0).transpose();
  Eigen::VectorXd y =
      batch.rewards.array() + hp_.gamma * (1.0 - batch.dones.array()) * q_next.array();

  DdpgDiagnostics diag;
  diag.critic_target = y;

  // Critic step.
  Eigen::MatrixXd sa(cfg_.obs_dim + cfg_.action_dim, B);
  sa.topRows(cfg_.obs_dim) = batch.obs;
  sa.bottomRows(cfg_.action_dim) = batch.actions;
  Mlp::Trace critic_trace = critic_.forward_trace(sa);
  Eigen::VectorXd q = critic_trace.activations.back().row(0).transpose();
  Eigen::VectorXd err = q - y;
  diag.critic_loss = err.squaredNorm() / static_cast<double>(B);
  Eigen::MatrixXd critic_upstream = (2.0 / static_cast<double>(B)) * err.transpose();
  Mlp::BackwardResult critic_bw = critic_.backward(critic_trace, critic_upstream);
  critic_opt_.step(critic_, critic_bw.grads, hp_.learning_rate);

  // Actor step: ascend Q(s, mu(s)) through the updated critic.
  Mlp::Trace actor_trace = actor_.forward_trace(batch.obs);
  Eigen::MatrixXd sa_pi(cfg_.obs_dim + cfg_.action_dim, B);
  sa_pi.topRows(cfg_.obs_dim) = batch.obs;
  sa_pi.bottomRows(cfg_.action_dim) =
      (actor_trace.activations.back().array() * half + center).matrix();
  Mlp::Trace q_trace = critic_.forward_trace(sa_pi);
  diag.actor_objective = q_trace.activations.back().row(0).mean();
  Eigen::MatrixXd q_upstream =
      Eigen::MatrixXd::Constant(1, B, -1.0 / static_cast<double>(B));
  Mlp::BackwardResult q_bw = critic_.backward(q_trace, q_upstream);
  Eigen::MatrixXd actor_upstream = q_bw.input_grad.bottomRows(cfg_.action_dim) * half;
  Mlp::BackwardResult actor_bw = actor_.backward(actor_trace, actor_upstream);
  actor_opt_.step(actor_, actor_bw.grads, hp_.learning_rate);

  soft_update(critic_, critic_target_, hp_.tau);
  soft_update(actor_, actor_target_, hp_.tau);
  return diag;
}

void DdpgAgent::set_hyperparams(const Eigen::VectorXd& hp) { set_hyperparams(HyperDdpg::from_vector(hp)); }

void DdpgAgent::set_hyperparams(const HyperDdpg& hp) {
  hp.validate();
  hp_ = hp;
}

std::string DdpgAgent::save_state() const {
  BlobWriter w;
  w.add("actor", actor_.serialize());
  w.add("critic", critic_.serialize());
  w.add("actor_target", actor_target_.serialize());
  w.add("critic_target", critic_target_.serialize());
  w.add("actor_adam", actor_opt_.serialize());
  w.add("critic_adam", critic_opt_.serialize());
  return w.finish();
}

void DdpgAgent::load_state(const std::string& blob) {
  BlobReader r(blob);
  actor_ = Mlp::deserialize(r.section("actor"));
  critic_ = Mlp::deserialize(r.section("critic"));
  actor_target_ = Mlp::deserialize(r.section("actor_target"));
  critic_target_ = Mlp::deserialize(r.section("critic_target"));
  actor_opt_ = AdamOptimizer::deserialize(r.section("actor_adam"), actor_);
  critic_opt_ = AdamOptimizer::deserialize(r.section("critic_adam"), critic_);
}

// ---------------------------------------------------------------------------
// PPO

void RolloutBuffer::reset(int obs_dim, int steps) {
  obs.resize(obs_dim, steps);
  actions.assign(static_cast<std::size_t>(steps), 0);
  log_probs.resize(steps);
  values.resize(steps);
  rewards.resize(steps);
  dones.resize(steps);
  filled = 0;
}

PpoAgent::PpoAgent(const PpoConfig& cfg, HyperPpo hp)
    : cfg_(cfg),
      hp_(hp),
      policy_(Mlp::create({cfg.obs_dim, cfg.hidden_width, cfg.hidden_width, cfg.action_count},
                          Activation::Tanh, Activation::Identity, derive_seed(cfg.seed, 11))),
      value_(Mlp::create({cfg.obs_dim, cfg.hidden_width, cfg.hidden_width, 1}, Activation::Tanh,
                         Activation::Identity, derive_seed(cfg.seed, 12))),
      policy_opt_(policy_),
      value_opt_(value_),
      rng_(derive_seed(cfg.seed, 13)) {
  hp_.validate();
  if (cfg.obs_dim < 1 || cfg.action_count < 2) throw invalid_config("ppo: bad dimensions");
  rollout_.reset(cfg.obs_dim, cfg.rollout_steps);
}

Eigen::MatrixXd PpoAgent::log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = logits;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double m = out.col(c).maxCoeff();
    const double lse = m + std::log((out.col(c).array() - m).exp().sum());
    out.col(c).array() -= lse;
  }
  return out;
}

double PpoAgent::value_of(const Eigen::VectorXd& obs) const { return value_.forward(obs)[0]; }

ActionValue PpoAgent::act(const Eigen::VectorXd& obs) {
  const Eigen::VectorXd logits = policy_.forward(obs);
  const Eigen::VectorXd logp = log_softmax(logits);
  const Eigen::VectorXd p = logp.array().exp();
  const double u = rng_.uniform();
  double acc = 0.0;
  int action = cfg_.action_count - 1;
  for (int k = 0; k < cfg_.action_count; ++k) {
    acc += p[k];
    if (u < acc) {
      action = k;
      break;
    }
  }
  cached_log_prob_ = logp[action];
  cached_value_ = value_of(obs);
  return action;
}

ActionValue PpoAgent::act_deterministic(const Eigen::VectorXd& obs) {
  const Eigen::VectorXd logits = policy_.forward(obs);
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

void PpoAgent::observe(const Eigen::VectorXd& obs, const ActionValue& action, double reward,
                       const Eigen::VectorXd& next_obs, bool terminated, bool truncated) {
  const int* a = std::get_if<int>(&action);
  if (a == nullptr) throw std::invalid_argument("ppo: expected a discrete action");

  double r = reward;
  double done = terminated ? 1.0 : 0.0;
  if (truncated && !terminated) {
    // Timeout: bootstrap the cut-off tail into the reward, then treat the
    // step as an episode end for advantage estimation.
    r += hp_.gamma * value_of(next_obs);
    done = 1.0;
  }

  const int i = rollout_.filled;
  rollout_.obs.col(i) = obs;
  rollout_.actions[static_cast<std::size_t>(i)] = *a;
  rollout_.log_probs[i] = cached_log_prob_;
  rollout_.values[i] = cached_value_;
  rollout_.rewards[i] = r;
  rollout_.dones[i] = done;
  ++rollout_.filled;

  if (rollout_.full()) {
    const double last_value = value_of(next_obs);
    last_diag_ = update(rollout_, last_value);
    rollout_.reset(cfg_.obs_dim, cfg_.rollout_steps);
  }
}

PpoDiagnostics PpoAgent::update(const RolloutBuffer& rollout, double last_value) {
  const int T = rollout.filled;
  if (T == 0) throw std::invalid_argument("ppo update: empty rollout");

  const Eigen::VectorXd rewards = rollout.rewards.head(T);
  const Eigen::VectorXd values = rollout.values.head(T);
  const Eigen::VectorXd dones = rollout.dones.head(T);
  auto [advantages, returns] = compute_gae(rewards, values, dones, last_value, hp_.gamma,
                                           hp_.gae_lambda);

  PpoDiagnostics diag;
  diag.advantages = advantages;

  std::vector<int> order(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) order[static_cast<std::size_t>(i)] = i;

  double policy_loss_sum = 0.0, value_loss_sum = 0.0, entropy_sum = 0.0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    // Fisher-Yates with the agent's own stream.
    for (int i = T - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng_.uniform_int(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < T; start += cfg_.minibatch_size) {
      const int m = std::min(cfg_.minibatch_size, T - start);

      Eigen::MatrixXd mb_obs(cfg_.obs_dim, m);
      Eigen::VectorXd mb_logp_old(m), mb_adv(m), mb_ret(m);
      std::vector<int> mb_act(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        mb_obs.col(i) = rollout.obs.col(idx);
        mb_logp_old[i] = rollout.log_probs[idx];
        mb_adv[i] = advantages[idx];
        mb_ret[i] = returns[idx];
        mb_act[static_cast<std::size_t>(i)] = rollout.actions[static_cast<std::size_t>(idx)];
      }

      // Advantages normalized per minibatch.
      const double mean = mb_adv.mean();
      const double sd = std::sqrt((mb_adv.array() - mean).square().mean());
      Eigen::VectorXd adv = (mb_adv.array() - mean) / (sd + 1e-8);

      Mlp::Trace policy_trace = policy_.forward_trace(mb_obs);
      const Eigen::MatrixXd logp_all = log_softmax(policy_trace.activations.back());
      const Eigen::MatrixXd probs = logp_all.array().exp();

      Eigen::MatrixXd policy_upstream = Eigen::MatrixXd::Zero(cfg_.action_count, m);
      double mb_policy_loss = 0.0, mb_entropy = 0.0;
      const double lo = 1.0 - cfg_.clip_range, hi = 1.0 + cfg_.clip_range;
      for (int i = 0; i < m; ++i) {
        const int a = mb_act[static_cast<std::size_t>(i)];
        const double logp_new = logp_all(a, i);
        const double ratio = std::exp(logp_new - mb_logp_old[i]);
        const double surr1 = ratio * adv[i];
        const double surr2 = std::clamp(ratio, lo, hi) * adv[i];
        mb_policy_loss += -std::min(surr1, surr2);

        const double entropy = -(probs.col(i).array() * logp_all.col(i).array()).sum();
        mb_entropy += entropy;

        // Surrogate gradient flows only while the unclipped branch is active.
        if (surr1 <= surr2) {
          const double g = -adv[i] * ratio / static_cast<double>(m);
          policy_upstream.col(i) -= g * probs.col(i);
          policy_upstream(a, i) += g;
        }
        // Entropy bonus: d(-ent_coef * H)/dlogits = ent_coef * p * (logp + H).
        policy_upstream.col(i).array() +=
            hp_.ent_coef * probs.col(i).array() * (logp_all.col(i).array() + entropy) /
            static_cast<double>(m);
      }
      mb_policy_loss /= static_cast<double>(m);
      mb_entropy /= static_cast<double>(m);

      Mlp::Trace value_trace = value_.forward_trace(mb_obs);
      const Eigen::VectorXd v = value_trace.activations.back().row(0).transpose();
      const Eigen::VectorXd verr = v - mb_ret;
      const double mb_value_loss = verr.squaredNorm() / static_cast<double>(m);
      Eigen::MatrixXd value_upstream =
          (hp_.vf_coef * 2.0 / static_cast<double>(m)) * verr.transpose();

      Mlp::BackwardResult policy_bw = policy_.backward(policy_trace, policy_upstream);
      Mlp::BackwardResult value_bw = value_.backward(value_trace, value_upstream);

      const std::vector<GradBundle*> bundles = {&policy_bw.grads, &value_bw.grads};
      const double pre = clip_global_norm(bundles, hp_.max_grad_norm);
      double post_sq = 0.0;
      post_sq += policy_bw.grads.global_norm() * policy_bw.grads.global_norm();
      post_sq += value_bw.grads.global_norm() * value_bw.grads.global_norm();
      const double post = std::sqrt(post_sq);
      diag.max_pre_clip_grad_norm = std::max(diag.max_pre_clip_grad_norm, pre);
      diag.max_post_clip_grad_norm = std::max(diag.max_post_clip_grad_norm, post);

      policy_opt_.step(policy_, policy_bw.grads, hp_.learning_rate);
      value_opt_.step(value_, value_bw.grads, hp_.learning_rate);

      policy_loss_sum += mb_policy_loss;
      value_loss_sum += mb_value_loss;
      entropy_sum += mb_entropy;
      ++diag.minibatches;
    }
  }

  diag.policy_loss = policy_loss_sum / diag.minibatches;
  diag.value_loss = value_loss_sum / diag.minibatches;
  diag.entropy = entropy_sum / diag.minibatches;
  return diag;
}

void PpoAgent::set_hyperparams(const Eigen::VectorXd& hp) { set_hyperparams(HyperPpo::from_vector(hp)); }

void PpoAgent::set_hyperparams(const HyperPpo& hp) {
  hp.validate();
  hp_ = hp;
}

std::string PpoAgent::save_state() const {
  BlobWriter w;
  w.add("policy", policy_.serialize());
  w.add("value", value_.serialize());
  w.add("policy_adam", policy_opt_.serialize());
  w.add("value_adam", value_opt_.serialize());
  return w.finish();
}

void PpoAgent::load_state(const std::string& blob) {
  BlobReader r(blob);
  policy_ = Mlp::deserialize(r.section("policy"));
  value_ = Mlp::deserialize(r.section("value"));
  policy_opt_ = AdamOptimizer::deserialize(r.section("policy_adam"), policy_);
  value_opt_ = AdamOptimizer::deserialize(r.section("value_adam"), value_);
}

}  // namespace ctxtune
