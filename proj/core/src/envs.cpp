#include "ctxtune/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"

namespace ctxtune {

namespace {

constexpr double kPi = 3.14159265358979323846;

double fmt_field(const std::string& field, long line) {
  try {
    std::size_t used = 0;
    double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw parse_error("trajectory csv: bad numeric field '" + field + "'", line);
  }
}

}  // namespace

double Env::context_value(const std::string& feature) const {
  auto it = effective_.find(feature);
  if (it == effective_.end())
    throw std::invalid_argument("env: no feature named '" + feature + "'");
  return it->second;
}

void Env::apply_context(const Context& instance) {
  // Start from defaults, then overlay the instance's assignments.
  effective_.clear();
  for (const ContextFeature& f : spec().features) effective_[f.name] = f.default_value;
  for (const auto& [name, value] : instance.assignments) {
    auto it = effective_.find(name);
    if (it == effective_.end())
      throw std::invalid_argument("env '" + spec().name + "': unknown context feature '" + name + "'");
    if (!std::isfinite(value))
      throw std::invalid_argument("env '" + spec().name + "': non-finite value for '" + name + "'");
    it->second = value;
  }
}

// ---------------------------------------------------------------------------
// Pendulum

PendulumEnv::PendulumEnv() {
  spec_.name = "pendulum";
  spec_.base_obs_dim = 3;
  spec_.action_kind = ActionKind::ContinuousBox;
  spec_.action_dim_or_count = 1;
  spec_.action_low = -kMaxTorque;
  spec_.action_high = kMaxTorque;
  spec_.horizon = 200;
  spec_.features = {
      {"gravity", 10.0, 0.0, std::numeric_limits<double>::infinity()},
      {"length", 1.0, 0.0, std::numeric_limits<double>::infinity()},
      {"mass", 1.0, 0.0, std::numeric_limits<double>::infinity()},
  };
}

double PendulumEnv::wrap_angle(double x) {
  double r = std::fmod(x + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  return r - kPi;
}

Eigen::VectorXd PendulumEnv::reset(const Context& instance, std::uint64_t seed) {
  apply_context(instance);
  gravity_ = effective_.at("gravity");
  length_ = effective_.at("length");
  mass_ = effective_.at("mass");
  Rng rng(seed);
  theta_ = rng.uniform(-kPi, kPi);
  theta_dot_ = rng.uniform(-1.0, 1.0);
  step_count_ = 0;
  return observation();
}

StepResult PendulumEnv::step(const ActionValue& action) {
  const auto* vec = std::get_if<Eigen::VectorXd>(&action);
  if (vec == nullptr || vec->size() != 1)
    throw std::invalid_argument("pendulum: expected a 1-d continuous action");
  double u = (*vec)[0];
  if (!std::isfinite(u)) throw std::invalid_argument("pendulum: non-finite torque");
  u = std::clamp(u, -kMaxTorque, kMaxTorque);

  const double g = gravity_, l = length_, m = mass_;
  const double new_theta_dot = std::clamp(
      theta_dot_ + (3.0 * g / (2.0 * l)) * std::sin(theta_) * kDt + (3.0 / (m * l * l)) * u * kDt,
      -kMaxSpeed, kMaxSpeed);
  const double new_theta = theta_ + new_theta_dot * kDt;

  const double w = wrap_angle(theta_);
  const double reward = -(w * w + 0.1 * new_theta_dot * new_theta_dot + 0.001 * u * u);

  theta_ = new_theta;
  theta_dot_ = new_theta_dot;
  ++step_count_;

  StepResult r;
  r.obs = observation();
  r.reward = reward;
  r.terminated = false;
  r.truncated = step_count_ >= spec_.horizon;
  return r;
}

Eigen::VectorXd PendulumEnv::state() const {
  Eigen::VectorXd s(2);
  s << theta_, theta_dot_;
  return s;
}

void PendulumEnv::set_state(const Eigen::VectorXd& s) {
  if (s.size() != 2) throw std::invalid_argument("pendulum: state is [theta, theta_dot]");
  theta_ = s[0];
  theta_dot_ = s[1];
}

Eigen::VectorXd PendulumEnv::observation() const {
  Eigen::VectorXd o(3);
  o << std::cos(theta_), std::sin(theta_), theta_dot_;
  return o;
}

// ---------------------------------------------------------------------------
// Acrobot

namespace {
// Fixed acrobot constants (the first link length comes from the context).
constexpr double kM1 = 1.0, kM2 = 1.0;
constexpr double kL2 = 1.0;
constexpr double kLc1 = 0.5, kLc2 = 0.5;
constexpr double kI1 = 1.0, kI2 = 1.0;
constexpr double kAcrobotG = 9.8;
constexpr double kMaxVel1 = 4.0 * kPi;
constexpr double kMaxVel2 = 9.0 * kPi;
}  // namespace

AcrobotEnv::AcrobotEnv() {
  spec_.name = "acrobot";
  spec_.base_obs_dim = 6;
  spec_.action_kind = ActionKind::Discrete;
  spec_.action_dim_or_count = 3;
  spec_.horizon = 500;
  spec_.features = {
      {"link_length_1", 1.0, 0.0, std::numeric_limits<double>::infinity()},
  };
}

Eigen::VectorXd AcrobotEnv::reset(const Context& instance, std::uint64_t seed) {
  apply_context(instance);
  link_length_1_ = effective_.at("link_length_1");
  Rng rng(seed);
  for (int i = 0; i < 4; ++i) state_[i] = rng.uniform(-0.1, 0.1);
  step_count_ = 0;
  return observation();
}

Eigen::Vector4d AcrobotEnv::derivative(const Eigen::Vector4d& s, double torque) const {
  const double l1 = link_length_1_;
  const double th1 = s[0], th2 = s[1], dth1 = s[2], dth2 = s[3];

  const double d1 =
      kM1 * kLc1 * kLc1 + kM2 * (l1 * l1 + kLc2 * kLc2 + 2.0 * l1 * kLc2 * std::cos(th2)) + kI1 + kI2;
  const double d2 = kM2 * (kLc2 * kLc2 + l1 * kLc2 * std::cos(th2)) + kI2;
  const double phi2 = kM2 * kLc2 * kAcrobotG * std::cos(th1 + th2 - kPi / 2.0);
  const double phi1 = -kM2 * l1 * kLc2 * dth2 * dth2 * std::sin(th2) -
                      2.0 * kM2 * l1 * kLc2 * dth2 * dth1 * std::sin(th2) +
                      (kM1 * kLc1 + kM2 * l1) * kAcrobotG * std::cos(th1 - kPi / 2.0) + phi2;
  const double ddth2 =
      (torque + (d2 / d1) * phi1 - kM2 * l1 * kLc2 * dth1 * dth1 * std::sin(th2) - phi2) /
      (kM2 * kLc2 * kLc2 + kI2 - d2 * d2 / d1);
  const double ddth1 = -(d2 * ddth2 + phi1) / d1;
  return {dth1, dth2, ddth1, ddth2};
}

StepResult AcrobotEnv::step(const ActionValue& action) {
  const int* a = std::get_if<int>(&action);
  if (a == nullptr) throw std::invalid_argument("acrobot: expected a discrete action");
  if (*a < 0 || *a > 2) throw std::invalid_argument("acrobot: action must be in {0, 1, 2}");
  const double torque = static_cast<double>(*a - 1);

  const Eigen::Vector4d k1 = derivative(state_, torque);
  const Eigen::Vector4d k2 = derivative(state_ + (kDt / 2.0) * k1, torque);
  const Eigen::Vector4d k3 = derivative(state_ + (kDt / 2.0) * k2, torque);
  const Eigen::Vector4d k4 = derivative(state_ + kDt * k3, torque);
  state_ += (kDt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  state_[0] = PendulumEnv::wrap_angle(state_[0]);
  state_[1] = PendulumEnv::wrap_angle(state_[1]);
  state_[2] = std::clamp(state_[2], -kMaxVel1, kMaxVel1);
  state_[3] = std::clamp(state_[3], -kMaxVel2, kMaxVel2);
  ++step_count_;

  const bool terminated = -std::cos(state_[0]) - std::cos(state_[0] + state_[1]) > 1.0;
  StepResult r;
  r.obs = observation();
  r.reward = terminated ? 0.0 : -1.0;
  r.terminated = terminated;
  r.truncated = !terminated && step_count_ >= spec_.horizon;
  return r;
}

Eigen::VectorXd AcrobotEnv::state() const { return state_; }

void AcrobotEnv::set_state(const Eigen::VectorXd& s) {
  if (s.size() != 4) throw std::invalid_argument("acrobot: state is [th1, th2, th1dot, th2dot]");
  state_ = s;
}

Eigen::VectorXd AcrobotEnv::observation() const {
  Eigen::VectorXd o(6);
  o << std::cos(state_[0]), std::sin(state_[0]), std::cos(state_[1]), std::sin(state_[1]),
      state_[2], state_[3];
  return o;
}

// ---------------------------------------------------------------------------
// Lander

LanderEnv::LanderEnv() {
  spec_.name = "lander";
  spec_.base_obs_dim = 8;
  spec_.action_kind = ActionKind::Discrete;
  spec_.action_dim_or_count = 4;
  spec_.horizon = 1000;
  spec_.features = {
      {"gravity_y", -10.0, -std::numeric_limits<double>::infinity(), 0.0},
  };
}

Eigen::VectorXd LanderEnv::reset(const Context& instance, std::uint64_t seed) {
  apply_context(instance);
  gravity_y_ = effective_.at("gravity_y");
  Rng rng(seed);
  x_ = rng.uniform(-1.0, 1.0);
  y_ = 8.0;
  vx_ = rng.uniform(-0.2, 0.2);
  vy_ = rng.uniform(-0.5, 0.0);
  th_ = rng.uniform(-0.05, 0.05);
  om_ = 0.0;
  step_count_ = 0;
  prev_potential_ = potential();
  return observation();
}

void LanderEnv::leg_contacts(bool& c1, bool& c2) const {
  const double s = std::sin(th_), c = std::cos(th_);
  // World y of the leg tips at body-frame (+-kLegX, kLegY).
  const double tip1 = y_ + (-kLegX) * s + kLegY * c;
  const double tip2 = y_ + (+kLegX) * s + kLegY * c;
  c1 = tip1 <= 0.0;
  c2 = tip2 <= 0.0;
}

double LanderEnv::potential() const {
  bool c1 = false, c2 = false;
  leg_contacts(c1, c2);
  return -100.0 * std::hypot(x_ / 10.0, y_ / 10.0) -
         100.0 * std::hypot(vx_ / 10.0, vy_ / 10.0) - 100.0 * std::abs(th_) +
         10.0 * (c1 ? 1.0 : 0.0) + 10.0 * (c2 ? 1.0 : 0.0);
}

StepResult LanderEnv::step(const ActionValue& action) {
  const int* a = std::get_if<int>(&action);
  if (a == nullptr) throw std::invalid_argument("lander: expected a discrete action");
  if (*a < 0 || *a > 3) throw std::invalid_argument("lander: action must be in {0, 1, 2, 3}");

  double main = 0.0, side = 0.0, alpha = 0.0, fuel = 0.0;
  if (*a == 2) {
    main = kMainAccel;
    fuel = 0.3;
  } else if (*a == 1) {
    side = kSideAccel;
    alpha = kSideAlpha;
    fuel = 0.03;
  } else if (*a == 3) {
    side = -kSideAccel;
    alpha = -kSideAlpha;
    fuel = 0.03;
  }

  const double s = std::sin(th_), c = std::cos(th_);
  const double ax = main * (-s) + side * c;
  const double ay = gravity_y_ + main * c + side * s;

  vx_ += ax * kDt;
  vy_ += ay * kDt;
  om_ += alpha * kDt;
  x_ += vx_ * kDt;
  y_ += vy_ * kDt;
  th_ += om_ * kDt;
  ++step_count_;

  bool c1 = false, c2 = false;
  leg_contacts(c1, c2);
  const bool hull = y_ <= kHullClearance;
  const bool out = std::abs(x_) >= kWorldHalfX;
  const bool contact = c1 || c2 || hull;

  double terminal_bonus = 0.0;
  bool terminated = false;
  if (contact || out) {
    terminated = true;
    const bool gentle = (c1 || c2) && !hull && !out && std::abs(x_) <= kPadHalfWidth &&
                        std::hypot(vx_, vy_) <= kSafeSpeed && std::abs(th_) <= kSafeAngle;
    terminal_bonus = gentle ? 100.0 : -100.0;
  }

  const double pot = potential();
  const double reward = (pot - prev_potential_) - fuel + terminal_bonus;
  prev_potential_ = pot;

  StepResult r;
  r.obs = observation();
  r.reward = reward;
  r.terminated = terminated;
  r.truncated = !terminated && step_count_ >= spec_.horizon;
  return r;
}

Eigen::VectorXd LanderEnv::state() const {
  Eigen::VectorXd s(6);
  s << x_, y_, vx_, vy_, th_, om_;
  return s;
}

void LanderEnv::set_state(const Eigen::VectorXd& s) {
  if (s.size() != 6) throw std::invalid_argument("lander: state is [x, y, vx, vy, th, om]");
  x_ = s[0];
  y_ = s[1];
  vx_ = s[2];
  vy_ = s[3];
  th_ = s[4];
  om_ = s[5];
  prev_potential_ = potential();
}

Eigen::VectorXd LanderEnv::observation() const {
  bool c1 = false, c2 = false;
  leg_contacts(c1, c2);
  Eigen::VectorXd o(8);
  o << x_, y_, vx_, vy_, th_, om_, c1 ? 1.0 : 0.0, c2 ? 1.0 : 0.0;
  return o;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "pendulum") return std::make_unique<PendulumEnv>();
  if (name == "acrobot") return std::make_unique<AcrobotEnv>();
  if (name == "lander") return std::make_unique<LanderEnv>();
  throw invalid_config("unknown environment '" + name + "'");
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  const Eigen::Index state_dim = rows.empty() ? 0 : rows.front().state.size();
  out << "step";
  for (Eigen::Index i = 0; i < state_dim; ++i) out << ",s" << i;
  out << ",action,reward,terminated,truncated\n";
  char buf[32];
  for (const TrajectoryRow& row : rows) {
    out << row.step;
    for (Eigen::Index i = 0; i < state_dim; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row.state[i]);
      out << ',' << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", row.action);
    out << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", row.reward);
    out << ',' << buf << ',' << (row.terminated ? 1 : 0) << ',' << (row.truncated ? 1 : 0)
        << '\n';
  }
}

std::vector<TrajectoryRow> read_trajectory_csv(std::istream& in) {
  std::vector<TrajectoryRow> rows;
  std::string line;
  long line_no = 0;
  bool header = true;
  int state_dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (header) {
      if (fields.size() < 5) throw parse_error("trajectory csv: bad header", line_no);
      state_dim = static_cast<int>(fields.size()) - 5;
      header = false;
      continue;
    }
    if (static_cast<int>(fields.size()) != state_dim + 5)
      throw parse_error("trajectory csv: wrong field count", line_no);
    TrajectoryRow row;
    row.step = static_cast<long>(fmt_field(fields[0], line_no));
    row.state.resize(state_dim);
    for (int i = 0; i < state_dim; ++i) row.state[i] = fmt_field(fields[1 + i], line_no);
    row.action = fmt_field(fields[state_dim + 1], line_no);
    row.reward = fmt_field(fields[state_dim + 2], line_no);
    row.terminated = fields[state_dim + 3] == "1";
    row.truncated = fields[state_dim + 4] == "1";
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ctxtune
