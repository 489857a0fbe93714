#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctxtune/envs.hpp"
#include "ctxtune/nn.hpp"
#include "ctxtune/rng.hpp"

namespace ctxtune {

// Tunable DDPG hyperparameters and their optimization box.
struct HyperDdpg {
  double learning_rate = 3e-5;
  double gamma = 0.99;
  double tau = 0.005;

  static constexpr double kLrLo = 1e-5, kLrHi = 0.02;
  static constexpr double kGammaLo = 0.8, kGammaHi = 0.999;
  static constexpr double kTauLo = 0.0, kTauHi = 0.99;

  void validate() const;  // throws std::invalid_argument when outside the box
  Eigen::Vector3d as_vector() const { return {learning_rate, gamma, tau}; }
  static HyperDdpg from_vector(const Eigen::VectorXd& v);
};

// Tunable PPO hyperparameters and their optimization box.
struct HyperPpo {
  double learning_rate = 3e-5;
  double gamma = 0.99;
  double ent_coef = 0.0;
  double vf_coef = 0.5;
  double max_grad_norm = 0.5;
  double gae_lambda = 0.95;

  static constexpr double kLrLo = 1e-5, kLrHi = 0.02;
  static constexpr double kGammaLo = 0.8, kGammaHi = 0.999;
  static constexpr double kEntLo = 0.0, kEntHi = 0.5;
  static constexpr double kVfLo = 0.0, kVfHi = 1.0;
  static constexpr double kMgnLo = 0.0, kMgnHi = 1.0;
  static constexpr double kLambdaLo = 0.8, kLambdaHi = 0.999;

  void validate() const;
  Eigen::VectorXd as_vector() const;
  static HyperPpo from_vector(const Eigen::VectorXd& v);
};

// target <- tau * online + (1 - tau) * target, element-wise. tau in [0, 1].
void soft_update(const Mlp& online, Mlp& target, double tau);

// Generalized advantage estimation:
//   delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t
//   A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
// with V_{T} = last_value. Returns (advantages, returns = A + V).
std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_gae(const Eigen::VectorXd& rewards,
                                                        const Eigen::VectorXd& values,
                                                        const Eigen::VectorXd& dones,
                                                        double last_value, double gamma,
                                                        double lambda);

// FIFO ring buffer of transitions with a seeded uniform sampler.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Eigen::VectorXd& obs, const Eigen::VectorXd& action, double reward,
            const Eigen::VectorXd& next_obs, bool done);
  std::size_t size() const { return obs_.size(); }
  std::size_t capacity() const { return capacity_; }

  struct Batch {
    Eigen::MatrixXd obs, actions, next_obs;  // columns = samples
    Eigen::VectorXd rewards, dones;
    Eigen::Index size() const { return rewards.size(); }
  };
  // Uniform with replacement; requires size() >= n.
  Batch sample(int n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Eigen::VectorXd> obs_, actions_, next_obs_;
  std::vector<double> rewards_;
  std::vector<double> dones_;
};

// Common interface the population scheduler's training lanes drive.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual ActionValue act(const Eigen::VectorXd& obs) = 0;                 // exploring
  virtual ActionValue act_deterministic(const Eigen::VectorXd& obs) = 0;  // evaluation
  virtual void observe(const Eigen::VectorXd& obs, const ActionValue& action, double reward,
                       const Eigen::VectorXd& next_obs, bool terminated, bool truncated) = 0;
  // Hyperparameters in the order of the algorithm's optimization space.
  virtual void set_hyperparams(const Eigen::VectorXd& hp) = 0;
  virtual Eigen::VectorXd hyperparams() const = 0;
  // Weights + optimizer state as a byte blob (exploit copies this verbatim).
  virtual std::string save_state() const = 0;
  virtual void load_state(const std::string& blob) = 0;
};

struct DdpgConfig {
  int obs_dim = 0;
  int action_dim = 1;
  double action_low = -1.0;
  double action_high = 1.0;
  int hidden_width = 64;
  int batch_size = 128;           // fixed; not part of the tuned space
  std::size_t buffer_capacity = 100000;
  long warmup_steps = 1000;       // uniform-random actions, no updates
  double noise_scale = 0.1;       // exploration noise as a fraction of the action range
  std::uint64_t seed = 0;
};

struct DdpgDiagnostics {
  double critic_loss = 0.0;
  double actor_objective = 0.0;  // mean Q(s, mu(s)) before the update
  Eigen::VectorXd critic_target;  // per-sample regression targets y
};

// Deterministic-policy actor-critic with target networks. One gradient
// update per environment step once the warmup buffer is filled.
class DdpgAgent final : public Agent {
 public:
  explicit DdpgAgent(const DdpgConfig& cfg, HyperDdpg hp = {});

  ActionValue act(const Eigen::VectorXd& obs) override;
  ActionValue act_deterministic(const Eigen::VectorXd& obs) override;
  void observe(const Eigen::VectorXd& obs, const ActionValue& action, double reward,
               const Eigen::VectorXd& next_obs, bool terminated, bool truncated) override;

  // Critic regression to r + gamma (1 - done) Q'(s', mu'(s')), actor ascent
  // on Q(s, mu(s)), then soft target updates. Exposed for tests.
  DdpgDiagnostics update(const ReplayBuffer::Batch& batch);

  void set_hyperparams(const Eigen::VectorXd& hp) override;
  Eigen::VectorXd hyperparams() const override { return hp_.as_vector(); }
  void set_hyperparams(const HyperDdpg& hp);
  const HyperDdpg& ddpg_hyperparams() const { return hp_; }

  std::string save_state() const override;
  void load_state(const std::string& blob) override;

  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }
  const Mlp& actor_target() const { return actor_target_; }
  const Mlp& critic_target() const { return critic_target_; }
  long steps_seen() const { return steps_seen_; }
  const DdpgConfig& config() const { return cfg_; }

 private:
  Eigen::VectorXd scale_to_box(const Eigen::VectorXd& tanh_out) const;

  DdpgConfig cfg_;
  HyperDdpg hp_;
  Mlp actor_, critic_, actor_target_, critic_target_;
  AdamOptimizer actor_opt_, critic_opt_;
  ReplayBuffer buffer_;
  Rng rng_;
  long steps_seen_ = 0;
};

struct PpoConfig {
  int obs_dim = 0;
  int action_count = 2;
  int hidden_width = 64;
  int rollout_steps = 2048;  // fixed segment length
  int minibatch_size = 64;
  int epochs = 10;
  double clip_range = 0.2;  // fixed; not part of the tuned space
  std::uint64_t seed = 0;
};

struct PpoDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double max_pre_clip_grad_norm = 0.0;
  double max_post_clip_grad_norm = 0.0;
  int minibatches = 0;
  Eigen::VectorXd advantages;  // raw (pre-normalization) advantages of the segment
};

// One PPO rollout segment stored as contiguous arrays; cleared after each
// update.
struct RolloutBuffer {
  Eigen::MatrixXd obs;       // obs_dim x T
  std::vector<int> actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd values;
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;
  int filled = 0;

  void reset(int obs_dim, int steps);
  bool full() const { return filled == static_cast<int>(actions.size()); }
};

// Clipped-surrogate policy gradient with separate policy/value networks.
class PpoAgent final : public Agent {
 public:
  explicit PpoAgent(const PpoConfig& cfg, HyperPpo hp = {});

  ActionValue act(const Eigen::VectorXd& obs) override;
  ActionValue act_deterministic(const Eigen::VectorXd& obs) override;
  void observe(const Eigen::VectorXd& obs, const ActionValue& action, double reward,
               const Eigen::VectorXd& next_obs, bool terminated, bool truncated) override;

  // Runs the clipped-surrogate update on a full rollout. Exposed for tests.
  PpoDiagnostics update(const RolloutBuffer& rollout, double last_value);

  void set_hyperparams(const Eigen::VectorXd& hp) override;
  Eigen::VectorXd hyperparams() const override { return hp_.as_vector(); }
  void set_hyperparams(const HyperPpo& hp);
  const HyperPpo& ppo_hyperparams() const { return hp_; }

  std::string save_state() const override;
  void load_state(const std::string& blob) override;

  const Mlp& policy() const { return policy_; }
  const Mlp& value() const { return value_; }
  const PpoConfig& config() const { return cfg_; }
  const PpoDiagnostics& last_update() const { return last_diag_; }

  // log-softmax of the policy logits for one observation batch.
  static Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits);

 private:
  double value_of(const Eigen::VectorXd& obs) const;

  PpoConfig cfg_;
  HyperPpo hp_;
  Mlp policy_, value_;
  AdamOptimizer policy_opt_, value_opt_;
  RolloutBuffer rollout_;
  Rng rng_;
  double cached_log_prob_ = 0.0;
  double cached_value_ = 0.0;
  PpoDiagnostics last_diag_;
};

}  // namespace ctxtune
