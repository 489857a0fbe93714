#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ctxtune/agents.hpp"
#include "ctxtune/context.hpp"
#include "ctxtune/envs.hpp"
#include "ctxtune/pb2.hpp"

namespace ctxtune {

// End-to-end run configuration. `algorithm` may be left empty to pick the
// per-env default (pendulum -> ddpg, acrobot/lander -> ppo).
struct RunConfig {
  std::string env = "pendulum";
  std::string algorithm;
  VisibilityMode visibility = VisibilityMode::Hidden;
  int population = 8;
  long interval = 4096;
  long total_steps = 40960;  // per member
  std::uint64_t seed = 1;
  int hidden_width = 64;
  std::string outdir = "run";
  bool async_mode = false;
  int n_instances = 100;
  bool normalize_context = false;

  // Fills the algorithm default and validates the env/algorithm pairing
  // (deterministic-policy learner needs the continuous action box).
  void resolve();
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

// The training instance distribution each environment uses: its varied
// feature with mu = default and sigma = 0.1 |mu|.
std::pair<ContextFeature, double> default_instance_distribution(const std::string& env_name);

// Deterministic seed of the instance set for a run seed.
std::uint64_t instance_seed_for(std::uint64_t run_seed);
InstanceSet make_training_instances(const RunConfig& cfg);

std::unique_ptr<Agent> make_agent(const std::string& algorithm, int obs_dim, const EnvSpec& spec,
                                  int hidden_width, std::uint64_t seed);

// One population member's training loop: owns the environment and the agent,
// presents the instance set round-robin (one context per episode), and
// reports the interval score (mean return of episodes completed during the
// interval; the running episode's partial return when none completed).
class TrainingLane final : public Trainable {
 public:
  TrainingLane(const RunConfig& cfg, const InstanceSet& instances, int member_id);

  double run_interval(long steps) override;
  std::string save_state() const override { return agent_->save_state(); }
  void load_state(const std::string& blob) override { agent_->load_state(blob); }
  void set_hyperparams(const Eigen::VectorXd& hp) override;
  Eigen::VectorXd hyperparams() const override { return agent_->hyperparams(); }

  Agent& agent() { return *agent_; }
  Env& env() { return *env_; }
  int obs_dim() const { return obs_dim_; }
  long steps_done() const { return steps_done_; }
  long episodes_started() const { return episode_index_; }
  // Hyperparameter assignments applied so far, as (global step, value) pairs.
  const std::vector<std::pair<long, Eigen::VectorXd>>& switch_log() const { return switch_log_; }

 private:
  void begin_episode();

  const InstanceSet& instances_;
  RunConfig cfg_;
  int member_id_ = 0;
  std::unique_ptr<Env> env_;
  std::unique_ptr<Agent> agent_;
  int obs_dim_ = 0;
  long steps_done_ = 0;
  long episode_index_ = 0;
  bool episode_active_ = false;
  Context current_context_;
  Eigen::VectorXd obs_;
  double episode_return_ = 0.0;
  std::vector<std::pair<long, Eigen::VectorXd>> switch_log_;
};

struct EvalResult {
  double mean = 0.0;
  std::vector<double> per_instance;  // instance-major, episodes averaged in
};

// Deterministic-policy evaluation: mean return over instances x episodes.
// Episode reset seeds are shared across instances (common random numbers),
// so identical contexts produce identical returns.
EvalResult evaluate(Agent& agent, Env& env, const InstanceSet& instances,
                    VisibilityMode visibility, int episodes_per_instance, std::uint64_t eval_seed,
                    bool normalize_context = false);

// Replaying one lineage's schedule on fresh seeds.
struct EvalReport {
  std::string schedule_id;
  std::vector<std::uint64_t> seeds;
  // Per seed: training curve of (global step, interval score).
  std::vector<std::vector<std::pair<long, double>>> curves;
  // Per seed: final per-instance returns on the training instance set.
  std::vector<std::vector<double>> per_instance;
  // Per seed: hyperparameter switches applied during the replay.
  std::vector<std::vector<std::pair<long, Eigen::VectorXd>>> applied_switches;
  std::vector<double> final_means;  // per seed
  double mean = 0.0;
  double std_error = 0.0;

  std::string to_json(const HyperparamSpace& space) const;
};

// Trains a fresh agent per seed, switching hyperparameters at the schedule's
// recorded steps (active vector at step s = last entry with step <= s), then
// evaluates on the training instance set (one episode per instance). Seeds
// must be disjoint from the training seed in cfg.
EvalReport replay_schedule(const MemberSchedule& schedule, const RunConfig& cfg,
                           const std::vector<std::uint64_t>& seeds);

// PB2 training run; emits config.json, instances.json, metrics.csv,
// schedules.json, gp_diagnostics.csv and final checkpoints under cfg.outdir.
// Returns the run directory.
std::string run_training(const RunConfig& cfg);

// Final checkpoint files: agent state + hyperparameters + rebuild metadata.
void write_checkpoint(const std::string& path, const Agent& agent, const std::string& algorithm,
                      int obs_dim, const EnvSpec& spec, int hidden_width);
std::unique_ptr<Agent> load_checkpoint(const std::string& path);

}  // namespace ctxtune
