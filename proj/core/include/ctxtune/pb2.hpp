#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctxtune/bandit.hpp"

namespace ctxtune {

struct HyperparamDim {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
};

// Ordered box of tunable hyperparameters plus the shared starting point.
struct HyperparamSpace {
  std::vector<HyperparamDim> dims;
  Eigen::VectorXd initial;

  static HyperparamSpace ddpg();
  static HyperparamSpace ppo();
  static HyperparamSpace for_algorithm(const std::string& name);

  int size() const { return static_cast<int>(dims.size()); }
  bool contains(const Eigen::VectorXd& hp) const;
  // Linear map into [0,1]^d; throws std::invalid_argument outside the box.
  Eigen::VectorXd normalize(const Eigen::VectorXd& hp) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& unit) const;
};

// Reward improvement over one interval: score_t - score_{t-1}, with a 0
// baseline before the first interval.
double score_improvement(const std::vector<double>& score_history);

// What the scheduler drives: one population member's training workload.
class Trainable {
 public:
  virtual ~Trainable() = default;
  // Trains for `steps` environment steps and returns the interval score.
  virtual double run_interval(long steps) = 0;
  // Weights + optimizer state as a byte blob; load must restore exactly the
  // bytes save produced.
  virtual std::string save_state() const = 0;
  virtual void load_state(const std::string& blob) = 0;
  virtual void set_hyperparams(const Eigen::VectorXd& hp) = 0;
  virtual Eigen::VectorXd hyperparams() const = 0;
};

struct Pb2Config {
  int population = 8;
  long interval = 4096;          // environment steps between perturbation events
  double exploit_quantile = 0.25;
  long total_steps = 0;          // per-member budget
  std::uint64_t seed = 0;
  bool async_mode = false;       // no determinism guarantee
  bool record_event_blobs = false;
  int observation_window = 64;   // most recent bandit observations used in fit
  AcquisitionConfig acquisition;

  void validate() const;  // throws invalid_config
};

struct ScheduleEntry {
  long step = 0;
  int member = 0;
  Eigen::VectorXd hyperparams;      // denormalized
  std::optional<int> parent;        // donor member at an exploit, else none
  std::optional<double> score;      // interval score that triggered the event
};

struct MemberSchedule {
  int member = 0;
  bool truncated = false;
  std::vector<ScheduleEntry> entries;
};

struct ExploitEvent {
  int generation = 0;
  int member = 0;
  int parent = 0;
  // Filled only when record_event_blobs is set: the donor checkpoint captured
  // at the barrier and the member's checkpoint right after the copy. Weight
  // transfer is byte-exact, so the two must be identical.
  std::string donor_blob;
  std::string member_blob_after;
};

struct Pb2RunResult {
  std::vector<MemberSchedule> schedules;
  std::vector<ExploitEvent> events;
  std::vector<BanditObservation> observations;
  long generations = 0;
};

// Synchronous population-based bandit scheduler. Members train one interval
// per generation; at the barrier the bottom quantile copies weights and
// optimizer state from a random top-quantile donor and gets a fresh
// configuration from the GP bandit, everyone else keeps theirs.
class Pb2Scheduler {
 public:
  // Called once per member per generation, after the interval finished.
  using MetricsHook = std::function<void(long step, int member, double score,
                                         const Eigen::VectorXd& hyperparams)>;
  // Called once per generation after the GP fit (diagnostics logging).
  using GpHook = std::function<void(int generation, const GpModel& model)>;

  Pb2Scheduler(Pb2Config cfg, HyperparamSpace space);

  void set_metrics_hook(MetricsHook hook) { metrics_hook_ = std::move(hook); }
  void set_gp_hook(GpHook hook) { gp_hook_ = std::move(hook); }

  Pb2RunResult run(const std::vector<Trainable*>& members);

  const Pb2Config& config() const { return cfg_; }
  const HyperparamSpace& space() const { return space_; }

 private:
  Pb2RunResult run_synchronous(const std::vector<Trainable*>& members);
  Pb2RunResult run_asynchronous(const std::vector<Trainable*>& members);

  Pb2Config cfg_;
  HyperparamSpace space_;
  MetricsHook metrics_hook_;
  GpHook gp_hook_;
};

// schedules.json payload. `meta` carries run-level fields (env, algorithm,
// visibility, seed, ...) the harness wants alongside the lineages.
std::string schedules_to_json(const std::vector<MemberSchedule>& schedules,
                              const HyperparamSpace& space, long interval,
                              const std::string& meta_json);

struct ImportedSchedules {
  std::vector<MemberSchedule> schedules;
  HyperparamSpace space;
  long interval = 0;
  std::string meta_json;
};
ImportedSchedules schedules_from_json(const std::string& text);

}  // namespace ctxtune
