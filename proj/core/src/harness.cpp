#include "ctxtune/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"
#include "ctxtune/serial.hpp"

namespace fs = std::filesystem;

namespace ctxtune {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw io_error("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void RunConfig::resolve() {
  const auto e = make_env(env);  // throws invalid_config for unknown names
  const ActionKind kind = e->spec().action_kind;
  if (algorithm.empty()) algorithm = kind == ActionKind::ContinuousBox ? "ddpg" : "ppo";
  if (algorithm == "ddpg") {
    if (kind != ActionKind::ContinuousBox)
      throw invalid_config("ddpg needs a continuous action box; '" + env + "' is discrete");
  } else if (algorithm == "ppo") {
    if (kind != ActionKind::Discrete)
      throw invalid_config("ppo here drives discrete actions; '" + env + "' is continuous");
  } else {
    throw invalid_config("unknown algorithm '" + algorithm + "'");
  }
  if (population < 1) throw invalid_config("population must be >= 1");
  if (interval < 1) throw invalid_config("interval must be >= 1");
  if (total_steps < 1) throw invalid_config("total steps must be >= 1");
  if (hidden_width < 1) throw invalid_config("hidden width must be >= 1");
  if (n_instances < 1) throw invalid_config("instance count must be >= 1");
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["env"] = env;
  j["algorithm"] = algorithm;
  j["visibility"] = to_string(visibility);
  j["population"] = population;
  j["interval"] = interval;
  j["total_steps"] = total_steps;
  j["seed"] = seed;
  j["hidden_width"] = hidden_width;
  j["outdir"] = outdir;
  j["async_mode"] = async_mode;
  j["n_instances"] = n_instances;
  j["normalize_context"] = normalize_context;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(std::string("run config: ") + e.what());
  }
  RunConfig cfg;
  cfg.env = j.at("env").get<std::string>();
  cfg.algorithm = j.value("algorithm", std::string{});
  cfg.visibility = visibility_from_string(j.at("visibility").get<std::string>());
  cfg.population = j.value("population", cfg.population);
  cfg.interval = j.value("interval", cfg.interval);
  cfg.total_steps = j.value("total_steps", cfg.total_steps);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.hidden_width = j.value("hidden_width", cfg.hidden_width);
  cfg.outdir = j.value("outdir", cfg.outdir);
  cfg.async_mode = j.value("async_mode", cfg.async_mode);
  cfg.n_instances = j.value("n_instances", cfg.n_instances);
  cfg.normalize_context = j.value("normalize_context", cfg.normalize_context);
  return cfg;
}

std::pair<ContextFeature, double> default_instance_distribution(const std::string& env_name) {
  const auto e = make_env(env_name);
  std::string varied;
  if (env_name == "pendulum")
    varied = "gravity";
  else if (env_name == "acrobot")
    varied = "link_length_1";
  else
    varied = "gravity_y";
  for (const ContextFeature& f : e->spec().features)
    if (f.name == varied) return {f, 0.1 * std::abs(f.default_value)};
  throw invalid_config("env '" + env_name + "' does not expose feature '" + varied + "'");
}

std::uint64_t instance_seed_for(std::uint64_t run_seed) { return derive_seed(run_seed, 0x1257); }

InstanceSet make_training_instances(const RunConfig& cfg) {
  const auto [feature, sigma] = default_instance_distribution(cfg.env);
  return sample_instance_set(feature, feature.default_value, sigma, cfg.n_instances,
                             instance_seed_for(cfg.seed));
}

std::unique_ptr<Agent> make_agent(const std::string& algorithm, int obs_dim, const EnvSpec& spec,
                                  int hidden_width, std::uint64_t seed) {
  if (algorithm == "ddpg") {
    DdpgConfig c;
    c.obs_dim = obs_dim;
    c.action_dim = spec.action_dim_or_count;
    c.action_low = spec.action_low;
    c.action_high = spec.action_high;
    c.hidden_width = hidden_width;
    c.seed = seed;
    return std::make_unique<DdpgAgent>(c);
  }
  if (algorithm == "ppo") {
    PpoConfig c;
    c.obs_dim = obs_dim;
    c.action_count = spec.action_dim_or_count;
    c.hidden_width = hidden_width;
    c.seed = seed;
    return std::make_unique<PpoAgent>(c);
  }
  throw invalid_config("unknown algorithm '" + algorithm + "'");
}

// ---------------------------------------------------------------------------
// TrainingLane

TrainingLane::TrainingLane(const RunConfig& cfg, const InstanceSet& instances, int member_id)
    : instances_(instances), cfg_(cfg), member_id_(member_id) {
  cfg_.resolve();
  env_ = make_env(cfg_.env);
  const int varied = cfg_.visibility == VisibilityMode::Visible
                         ? static_cast<int>(instances_.contexts.front().assignments.size())
                         : 0;
  obs_dim_ = env_->spec().base_obs_dim + varied;
  agent_ = make_agent(cfg_.algorithm, obs_dim_, env_->spec(), cfg_.hidden_width,
                      derive_seed(cfg_.seed, 0xa6e2, static_cast<std::uint64_t>(member_id)));
}

void TrainingLane::begin_episode() {
  current_context_ = instances_.cycle(episode_index_);
  const Eigen::VectorXd base =
      env_->reset(current_context_, derive_seed(cfg_.seed, 0xe9, static_cast<std::uint64_t>(member_id_),
                                                static_cast<std::uint64_t>(episode_index_)));
  obs_ = augment_observation(base, current_context_, cfg_.visibility, env_->spec().features,
                             cfg_.normalize_context);
  episode_return_ = 0.0;
  episode_active_ = true;
  ++episode_index_;
}

double TrainingLane::run_interval(long steps) {
  std::vector<double> completed;
  for (long s = 0; s < steps; ++s) {
    if (!episode_active_) begin_episode();
    const ActionValue action = agent_->act(obs_);
    const StepResult sr = env_->step(action);
    Eigen::VectorXd next_obs = augment_observation(sr.obs, current_context_, cfg_.visibility,
                                                   env_->spec().features, cfg_.normalize_context);
    agent_->observe(obs_, action, sr.reward, next_obs, sr.terminated, sr.truncated);
    episode_return_ += sr.reward;
    obs_ = std::move(next_obs);
    ++steps_done_;
    if (sr.terminated || sr.truncated) {
      completed.push_back(episode_return_);
      episode_active_ = false;
    }
  }
  if (completed.empty()) return episode_return_;
  return std::accumulate(completed.begin(), completed.end(), 0.0) /
         static_cast<double>(completed.size());
}

void TrainingLane::set_hyperparams(const Eigen::VectorXd& hp) {
  agent_->set_hyperparams(hp);
  switch_log_.emplace_back(steps_done_, hp);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(Agent& agent, Env& env, const InstanceSet& instances,
                    VisibilityMode visibility, int episodes_per_instance, std::uint64_t eval_seed,
                    bool normalize_context) {
  if (episodes_per_instance < 1)
    throw std::invalid_argument("evaluate: episodes_per_instance must be >= 1");
  EvalResult result;
  result.per_instance.reserve(instances.size());
  for (const Context& ctx : instances.contexts) {
    double sum = 0.0;
    for (int e = 0; e < episodes_per_instance; ++e) {
      // Seed shared across instances so identical contexts replay identically.
      Eigen::VectorXd obs =
          augment_observation(env.reset(ctx, derive_seed(eval_seed, 0xe1a, static_cast<std::uint64_t>(e))),
                              ctx, visibility, env.spec().features, normalize_context);
      double ret = 0.0;
      while (true) {
        const StepResult sr = env.step(agent.act_deterministic(obs));
        ret += sr.reward;
        obs = augment_observation(sr.obs, ctx, visibility, env.spec().features, normalize_context);
        if (sr.terminated || sr.truncated) break;
      }
      sum += ret;
    }
    result.per_instance.push_back(sum / episodes_per_instance);
  }
  result.mean = std::accumulate(result.per_instance.begin(), result.per_instance.end(), 0.0) /
                static_cast<double>(result.per_instance.size());
  return result;
}

// ---------------------------------------------------------------------------
// Replay

std::string EvalReport::to_json(const HyperparamSpace& space) const {
  nlohmann::json j;
  j["schedule_id"] = schedule_id;
  j["seeds"] = seeds;
  nlohmann::json curves_json = nlohmann::json::array();
  for (const auto& curve : curves) {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& [step, value] : curve) c.push_back({{"step", step}, {"return", value}});
    curves_json.push_back(std::move(c));
  }
  j["curves"] = curves_json;
  j["per_instance"] = per_instance;
  nlohmann::json switches_json = nlohmann::json::array();
  for (const auto& log : applied_switches) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& [step, hp] : log) {
      nlohmann::json entry;
      entry["step"] = step;
      for (int d = 0; d < space.size(); ++d)
        entry["hyperparams"][space.dims[static_cast<std::size_t>(d)].name] = hp[d];
      s.push_back(std::move(entry));
    }
    switches_json.push_back(std::move(s));
  }
  j["applied_switches"] = switches_json;
  j["final_means"] = final_means;
  j["mean"] = mean;
  j["std_error"] = std_error;
  return j.dump(2);
}

EvalReport replay_schedule(const MemberSchedule& schedule, const RunConfig& cfg_in,
                           const std::vector<std::uint64_t>& seeds) {
  RunConfig cfg = cfg_in;
  cfg.resolve();
  if (schedule.entries.empty())
    throw std::invalid_argument("replay: schedule has no entries");
  if (schedule.entries.front().step != 0)
    throw std::invalid_argument("replay: schedule must start at step 0");
  const HyperparamSpace space = HyperparamSpace::for_algorithm(cfg.algorithm);
  for (const ScheduleEntry& e : schedule.entries) {
    if (e.hyperparams.size() != space.size())
      throw std::invalid_argument("replay: schedule dimensionality does not match '" +
                                  cfg.algorithm + "'");
    if (!space.contains(e.hyperparams))
      throw std::invalid_argument("replay: schedule entry outside the hyperparameter box");
  }
  for (std::uint64_t s : seeds)
    if (s == cfg.seed)
      throw std::invalid_argument("replay: evaluation seeds must be disjoint from the training seed");

  EvalReport report;
  report.schedule_id = "member_" + std::to_string(schedule.member);
  report.seeds = seeds;
  if (seeds.empty()) return report;

  const InstanceSet instances = make_training_instances(cfg);

  struct SeedOutcome {
    std::vector<std::pair<long, double>> curve;
    std::vector<double> per_instance;
    std::vector<std::pair<long, Eigen::VectorXd>> switches;
    double final_mean = 0.0;
  };

  auto replay_one = [&](std::uint64_t seed) {
    RunConfig lane_cfg = cfg;
    lane_cfg.seed = seed;
    TrainingLane lane(lane_cfg, instances, schedule.member);

    SeedOutcome out;
    std::size_t next_entry = 0;
    while (lane.steps_done() < cfg.total_steps) {
      while (next_entry < schedule.entries.size() &&
             schedule.entries[next_entry].step <= lane.steps_done()) {
        lane.set_hyperparams(schedule.entries[next_entry].hyperparams);
        ++next_entry;
      }
      const long next_switch = next_entry < schedule.entries.size()
                                   ? schedule.entries[next_entry].step
                                   : cfg.total_steps;
      const long chunk =
          std::min(cfg.interval, std::min(next_switch, cfg.total_steps) - lane.steps_done());
      const double score = lane.run_interval(chunk);
      out.curve.emplace_back(lane.steps_done(), score);
    }
    const EvalResult eval = evaluate(lane.agent(), lane.env(), instances, cfg.visibility, 1,
                                     derive_seed(seed, 0xf1a1), cfg.normalize_context);
    out.per_instance = eval.per_instance;
    out.final_mean = eval.mean;
    out.switches = lane.switch_log();
    return out;
  };

  std::vector<std::future<SeedOutcome>> lanes;
  lanes.reserve(seeds.size());
  for (std::uint64_t s : seeds)
    lanes.push_back(std::async(std::launch::async, replay_one, s));
  for (auto& lane : lanes) {
    SeedOutcome out = lane.get();
    report.curves.push_back(std::move(out.curve));
    report.per_instance.push_back(std::move(out.per_instance));
    report.applied_switches.push_back(std::move(out.switches));
    report.final_means.push_back(out.final_mean);
  }

  const double n = static_cast<double>(report.final_means.size());
  report.mean = std::accumulate(report.final_means.begin(), report.final_means.end(), 0.0) / n;
  if (report.final_means.size() > 1) {
    double sq = 0.0;
    for (double v : report.final_means) sq += (v - report.mean) * (v - report.mean);
    report.std_error = std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training run

std::string run_training(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.resolve();
  if (cfg.population < 2) throw invalid_config("training needs a population of >= 2 members");

  std::error_code ec;
  fs::create_directories(cfg.outdir, ec);
  if (ec) throw io_error("cannot create run directory '" + cfg.outdir + "': " + ec.message());
  fs::create_directories(cfg.outdir + "/checkpoints", ec);
  if (ec) throw io_error("cannot create checkpoint directory: " + ec.message());

  const InstanceSet instances = make_training_instances(cfg);
  write_text_file(cfg.outdir + "/instances.json", instances.to_json());

  std::vector<std::unique_ptr<TrainingLane>> lanes;
  lanes.reserve(static_cast<std::size_t>(cfg.population));
  for (int m = 0; m < cfg.population; ++m)
    lanes.push_back(std::make_unique<TrainingLane>(cfg, instances, m));
  const int obs_dim = lanes.front()->obs_dim();

  {
    nlohmann::json j = nlohmann::json::parse(cfg.to_json());
    j["obs_dim"] = obs_dim;
    j["base_obs_dim"] = lanes.front()->env().spec().base_obs_dim;
    j["instance_feature"] = instances.feature.name;
    write_text_file(cfg.outdir + "/config.json", j.dump(2));
  }

  const HyperparamSpace space = HyperparamSpace::for_algorithm(cfg.algorithm);

  std::ofstream metrics(cfg.outdir + "/metrics.csv", std::ios::binary);
  if (!metrics) throw io_error("cannot open metrics.csv for writing");
  metrics << "step,member,return";
  for (const auto& d : space.dims) metrics << ',' << d.name;
  metrics << ",wallclock_s\n";

  std::ofstream gp_log(cfg.outdir + "/gp_diagnostics.csv", std::ios::binary);
  if (!gp_log) throw io_error("cannot open gp_diagnostics.csv for writing");
  gp_log << "generation,n_obs,lml,signal_var,noise_var,epsilon";
  for (const auto& d : space.dims) gp_log << ",ls_" << d.name;
  gp_log << "\n";

  Pb2Config pcfg;
  pcfg.population = cfg.population;
  pcfg.interval = cfg.interval;
  pcfg.total_steps = cfg.total_steps;
  pcfg.seed = cfg.seed;
  pcfg.async_mode = cfg.async_mode;

  Pb2Scheduler scheduler(pcfg, space);
  const auto t0 = std::chrono::steady_clock::now();
  scheduler.set_metrics_hook([&](long step, int member, double score, const Eigen::VectorXd& hp) {
    // In the deterministic synchronous mode the wallclock column is zeroed
    // so repeated runs emit identical bytes.
    double wallclock = 0.0;
    if (cfg.async_mode)
      wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << step << ',' << member << ',' << fmt_double(score);
    for (int d = 0; d < hp.size(); ++d) metrics << ',' << fmt_double(hp[d]);
    metrics << ',' << fmt_double(wallclock) << '\n';
  });
  scheduler.set_gp_hook([&](int generation, const GpModel& model) {
    gp_log << generation << ',' << model.size() << ',' << fmt_double(model.log_marginal_likelihood())
           << ',' << fmt_double(model.params().signal_var) << ','
           << fmt_double(model.params().noise_var) << ',' << fmt_double(model.params().epsilon);
    for (int d = 0; d < model.dim(); ++d) gp_log << ',' << fmt_double(model.params().lengthscales[d]);
    gp_log << '\n';
  });

  std::vector<Trainable*> members;
  members.reserve(lanes.size());
  for (auto& lane : lanes) members.push_back(lane.get());
  const Pb2RunResult result = scheduler.run(members);

  metrics.close();
  gp_log.close();

  nlohmann::json meta;
  meta["env"] = cfg.env;
  meta["algorithm"] = cfg.algorithm;
  meta["visibility"] = to_string(cfg.visibility);
  meta["population"] = cfg.population;
  meta["total_steps"] = cfg.total_steps;
  meta["seed"] = cfg.seed;
  meta["hidden_width"] = cfg.hidden_width;
  meta["n_instances"] = cfg.n_instances;
  meta["obs_dim"] = obs_dim;
  write_text_file(cfg.outdir + "/schedules.json",
                  schedules_to_json(result.schedules, space, cfg.interval, meta.dump()));

  for (int m = 0; m < cfg.population; ++m)
    write_checkpoint(cfg.outdir + "/checkpoints/member_" + std::to_string(m) + ".ckpt",
                     lanes[static_cast<std::size_t>(m)]->agent(), cfg.algorithm, obs_dim,
                     lanes[static_cast<std::size_t>(m)]->env().spec(), cfg.hidden_width);

  return cfg.outdir;
}

// ---------------------------------------------------------------------------
// Checkpoint files

void write_checkpoint(const std::string& path, const Agent& agent, const std::string& algorithm,
                      int obs_dim, const EnvSpec& spec, int hidden_width) {
  nlohmann::json meta;
  meta["algorithm"] = algorithm;
  meta["env"] = spec.name;
  meta["obs_dim"] = obs_dim;
  meta["hidden_width"] = hidden_width;

  const Eigen::VectorXd hp = agent.hyperparams();
  nlohmann::json hp_json = nlohmann::json::array();
  for (int d = 0; d < hp.size(); ++d) hp_json.push_back(hp[d]);

  BlobWriter w;
  w.add("meta", meta.dump());
  w.add("hyperparams", hp_json.dump());
  w.add("state", agent.save_state());
  write_text_file(path, w.finish());
}

std::unique_ptr<Agent> load_checkpoint(const std::string& path) {
  const std::string bytes = read_text_file(path);
  BlobReader r(bytes);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.section("meta"));
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(std::string("checkpoint meta: ") + e.what());
  }
  const auto env = make_env(meta.at("env").get<std::string>());
  auto agent = make_agent(meta.at("algorithm").get<std::string>(), meta.at("obs_dim").get<int>(),
                          env->spec(), meta.at("hidden_width").get<int>(), /*seed=*/0);
  agent->load_state(r.section("state"));
  const auto hp_values = nlohmann::json::parse(r.section("hyperparams")).get<std::vector<double>>();
  Eigen::VectorXd hp(static_cast<Eigen::Index>(hp_values.size()));
  for (std::size_t d = 0; d < hp_values.size(); ++d) hp[static_cast<Eigen::Index>(d)] = hp_values[d];
  agent->set_hyperparams(hp);
  return agent;
}

}  // namespace ctxtune
