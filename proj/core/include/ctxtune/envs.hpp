#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "ctxtune/context.hpp"

namespace ctxtune {

enum class ActionKind { ContinuousBox, Discrete };

struct EnvSpec {
  std::string name;
  int base_obs_dim = 0;
  ActionKind action_kind = ActionKind::Discrete;
  // Box dimensionality for continuous actions, action count for discrete.
  int action_dim_or_count = 0;
  double action_low = 0.0;
  double action_high = 0.0;
  long horizon = 0;
  std::vector<ContextFeature> features;
};

struct StepResult {
  Eigen::VectorXd obs;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

// Continuous actions carry a vector, discrete ones an index.
using ActionValue = std::variant<Eigen::VectorXd, int>;

// A single MDP instance. reset() applies the context to the physics
// constants and draws a fresh initial state; step() advances it. Instances
// are single-threaded; distinct instances share nothing mutable.
class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;

  // Validates the context (unknown feature names are invalid), applies it to
  // the physics constants, seeds the initial-state draw, and returns the base
  // observation. Context augmentation is the caller's job.
  virtual Eigen::VectorXd reset(const Context& instance, std::uint64_t seed) = 0;

  virtual StepResult step(const ActionValue& action) = 0;

  // Physical state vector (diagnostic/oracle hook).
  virtual Eigen::VectorXd state() const = 0;
  virtual void set_state(const Eigen::VectorXd& s) = 0;

  virtual Eigen::VectorXd observation() const = 0;

  // Effective value of a feature after reset() applied the context.
  double context_value(const std::string& feature) const;

 protected:
  void apply_context(const Context& instance);
  std::map<std::string, double> effective_;
  long step_count_ = 0;
};

// Pendulum swing-up, continuous torque in [-2, 2], horizon 200, never
// terminates. Explicit Euler with dt = 0.05:
//   thdot' = clamp(thdot + (3 g / (2 l)) sin(th) dt + (3 / (m l^2)) u dt, -8, 8)
//   th'    = th + thdot' dt
//   reward = -(wrap(th)^2 + 0.1 thdot'^2 + 0.001 u^2)
// wrap maps the angle into [-pi, pi); ties at +-pi resolve to -pi.
// Observation: [cos th, sin th, thdot]. Context features: gravity (10),
// length (1), mass (1).
class PendulumEnv final : public Env {
 public:
  PendulumEnv();
  const EnvSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset(const Context& instance, std::uint64_t seed) override;
  StepResult step(const ActionValue& action) override;
  Eigen::VectorXd state() const override;
  void set_state(const Eigen::VectorXd& s) override;
  Eigen::VectorXd observation() const override;

  static double wrap_angle(double x);  // into [-pi, pi)
  static constexpr double kDt = 0.05;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;

 private:
  EnvSpec spec_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  double gravity_ = 10.0, length_ = 1.0, mass_ = 1.0;
};

// Two-link acrobot, discrete torque {-1, 0, +1} on the second joint,
// horizon 500, reward -1 per step until the tip reaches
// -cos(th1) - cos(th1 + th2) > 1 (reward 0 on the terminating step).
// One RK4 step of the two-link equations (book formulation, including the
// d2/d1 coupling term in the second torque equation) over dt = 0.2; angles
// wrapped to [-pi, pi], velocities clamped to [-4pi, 4pi] and [-9pi, 9pi].
// Observation: [cos th1, sin th1, cos th2, sin th2, th1dot, th2dot].
// Context feature: link_length_1 (1).
class AcrobotEnv final : public Env {
 public:
  AcrobotEnv();
  const EnvSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset(const Context& instance, std::uint64_t seed) override;
  StepResult step(const ActionValue& action) override;
  Eigen::VectorXd state() const override;
  void set_state(const Eigen::VectorXd& s) override;
  Eigen::VectorXd observation() const override;

  // Time derivative of [th1, th2, th1dot, th2dot] under a fixed torque.
  // Exposed so oracle integrators can run the identical vector field.
  Eigen::Vector4d derivative(const Eigen::Vector4d& s, double torque) const;

  static constexpr double kDt = 0.2;

 private:
  EnvSpec spec_;
  Eigen::Vector4d state_{0, 0, 0, 0};
  double link_length_1_ = 1.0;
};

// Simplified lunar lander: a rigid body with two landing legs over flat
// terrain, discrete actions {0: noop, 1: left thruster, 2: main engine,
// 3: right thruster}, horizon 1000.
//
// Dynamics (symplectic Euler, dt = 0.02, unit mass/inertia):
//   main engine:  acceleration 15 along body-up = (-sin th, cos th)
//   side engines: acceleration +-1.5 along body-right = (cos th, sin th)
//                 and angular acceleration +-3 (left engine: +x force,
//                 +angular; right engine: the negatives)
//   gravity:      (0, gravity_y), gravity_y < 0 from the context
//   v += a dt; om += alpha dt; then x += vx dt; y += vy dt; th += om dt
//
// Leg tips sit at body-frame (+-0.35, -0.45); a leg is in contact when its
// world y <= 0. The episode ends at first contact (leg or hull, hull when
// y <= 0.25) or when |x| >= 10:
//   landed (+100): a leg touched with |x| <= 1.5 (pad half-width),
//                  sqrt(vx^2+vy^2) <= 1.0, |th| <= 0.25
//   crashed (-100): any other contact or leaving [-10, 10]
//
// Per-step reward is the potential difference Phi(s') - Phi(s) minus fuel
// (0.3 main, 0.03 side) plus the terminal bonus, with
//   Phi(s) = -100 sqrt((x/10)^2 + (y/10)^2) - 100 sqrt((vx/10)^2 + (vy/10)^2)
//            - 100 |th| + 10 c1 + 10 c2
// Observation: [x, y, vx, vy, th, om, c1, c2]. Context feature: gravity_y (-10).
class LanderEnv final : public Env {
 public:
  LanderEnv();
  const EnvSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset(const Context& instance, std::uint64_t seed) override;
  StepResult step(const ActionValue& action) override;
  Eigen::VectorXd state() const override;  // [x, y, vx, vy, th, om]
  void set_state(const Eigen::VectorXd& s) override;
  Eigen::VectorXd observation() const override;

  static constexpr double kDt = 0.02;
  static constexpr double kMainAccel = 15.0;
  static constexpr double kSideAccel = 1.5;
  static constexpr double kSideAlpha = 3.0;
  static constexpr double kLegX = 0.35, kLegY = -0.45;
  static constexpr double kHullClearance = 0.25;
  static constexpr double kPadHalfWidth = 1.5;
  static constexpr double kWorldHalfX = 10.0;
  static constexpr double kSafeSpeed = 1.0;
  static constexpr double kSafeAngle = 0.25;

 private:
  double potential() const;
  void leg_contacts(bool& c1, bool& c2) const;

  EnvSpec spec_;
  double x_ = 0, y_ = 0, vx_ = 0, vy_ = 0, th_ = 0, om_ = 0;
  double gravity_y_ = -10.0;
  double prev_potential_ = 0.0;
};

std::unique_ptr<Env> make_env(const std::string& name);

// One line per step: step, state components, action, reward, terminated,
// truncated. Used for oracle replays of recorded trajectories.
struct TrajectoryRow {
  long step = 0;
  Eigen::VectorXd state;
  double action = 0.0;  // discrete actions stored as their index
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows);
std::vector<TrajectoryRow> read_trajectory_csv(std::istream& in);

}  // namespace ctxtune
