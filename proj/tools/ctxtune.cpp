// ctxtune: train population-tuned agents on contextual classic-control
// environments, replay the discovered hyperparameter schedules on fresh
// seeds, evaluate checkpoints, and plot learning curves.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxtune/errors.hpp"
#include "ctxtune/harness.hpp"
#include "ctxtune/plot.hpp"

namespace fs = std::filesystem;
using namespace ctxtune;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw io_error("write failed for '" + path + "'");
}

struct TrainArgs {
  RunConfig cfg;
  std::string visibility = "hidden";
};

struct ReplayArgs {
  std::string schedules_path;
  std::vector<std::uint64_t> eval_seeds;
  std::string outdir = "replay";
  int hidden_width = 0;  // 0 = keep the training run's width
  int member = -1;       // -1 = all lineages
  bool include_truncated = false;
};

struct EvalArgs {
  std::string rundir;
  std::string checkpoint;  // optional: a single checkpoint inside the run
  int episodes = 1;
  std::uint64_t seed = 12345;
};

struct PlotArgs {
  std::string input;
  std::string output = "plot.svg";
  bool band = false;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = args.cfg;
  cfg.visibility = visibility_from_string(args.visibility);
  const std::string dir = run_training(cfg);
  std::cout << "run directory: " << dir << "\n";
  std::cout << "  metrics:   " << dir << "/metrics.csv\n";
  std::cout << "  schedules: " << dir << "/schedules.json\n";
  return 0;
}

int cmd_replay(const ReplayArgs& args) {
  const ImportedSchedules imported = schedules_from_json(read_file(args.schedules_path));
  if (imported.meta_json.empty())
    throw invalid_config("schedules file carries no run metadata; cannot reconstruct the setup");
  const nlohmann::json meta = nlohmann::json::parse(imported.meta_json);

  RunConfig cfg;
  cfg.env = meta.at("env").get<std::string>();
  cfg.algorithm = meta.at("algorithm").get<std::string>();
  cfg.visibility = visibility_from_string(meta.at("visibility").get<std::string>());
  cfg.total_steps = meta.at("total_steps").get<long>();
  cfg.seed = meta.at("seed").get<std::uint64_t>();
  cfg.hidden_width = meta.at("hidden_width").get<int>();
  cfg.n_instances = meta.at("n_instances").get<int>();
  cfg.interval = imported.interval;
  if (args.hidden_width > 0) cfg.hidden_width = args.hidden_width;

  std::vector<std::uint64_t> seeds = args.eval_seeds;
  if (seeds.empty())
    for (std::uint64_t k = 1; k <= 5; ++k) seeds.push_back(cfg.seed + k);

  std::error_code ec;
  fs::create_directories(args.outdir, ec);
  if (ec) throw io_error("cannot create '" + args.outdir + "': " + ec.message());

  const HyperparamSpace space = HyperparamSpace::for_algorithm(cfg.algorithm);
  int replayed = 0;
  for (const MemberSchedule& schedule : imported.schedules) {
    if (args.member >= 0 && schedule.member != args.member) continue;
    if (schedule.truncated && !args.include_truncated) {
      std::cout << "skipping truncated lineage member_" << schedule.member
                << " (--include-truncated replays it)\n";
      continue;
    }
    const EvalReport report = replay_schedule(schedule, cfg, seeds);
    const std::string path =
        args.outdir + "/replay_member_" + std::to_string(schedule.member) + ".json";
    write_file(path, report.to_json(space));
    std::printf("member_%d: mean final return %.3f (stderr %.3f) over %zu seeds -> %s\n",
                schedule.member, report.mean, report.std_error, seeds.size(), path.c_str());
    ++replayed;
  }
  if (replayed == 0) throw invalid_config("no lineage matched the replay request");
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  const RunConfig cfg = RunConfig::from_json(read_file(args.rundir + "/config.json"));
  const InstanceSet instances = InstanceSet::from_json(read_file(args.rundir + "/instances.json"));
  const auto env = make_env(cfg.env);

  std::vector<std::string> paths;
  if (!args.checkpoint.empty()) {
    paths.push_back(args.checkpoint);
  } else {
    for (int m = 0; m < cfg.population; ++m)
      paths.push_back(args.rundir + "/checkpoints/member_" + std::to_string(m) + ".ckpt");
  }

  nlohmann::json out = nlohmann::json::array();
  for (const std::string& path : paths) {
    const auto agent = load_checkpoint(path);
    auto eval_env = make_env(cfg.env);
    const EvalResult result = evaluate(*agent, *eval_env, instances, cfg.visibility, args.episodes,
                                       args.seed, cfg.normalize_context);
    std::printf("%s: mean return %.3f over %zu instances x %d episodes\n", path.c_str(),
                result.mean, instances.size(), args.episodes);
    nlohmann::json j;
    j["checkpoint"] = path;
    j["mean"] = result.mean;
    j["per_instance"] = result.per_instance;
    out.push_back(std::move(j));
  }
  write_file(args.rundir + "/eval.json", out.dump(2));
  std::cout << "wrote " << args.rundir << "/eval.json\n";
  return 0;
}

int cmd_plot(const PlotArgs& args) {
  emit_plot(args.input, args.output, args.band);
  std::cout << "wrote " << args.output << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual-RL hyperparameter schedule tuning"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run population-based bandit training");
  t->add_option("--env", train.cfg.env, "pendulum | acrobot | lander")->capture_default_str();
  t->add_option("--algo", train.cfg.algorithm, "ddpg | ppo (default per env)");
  t->add_option("--visibility", train.visibility, "hidden | visible")->capture_default_str();
  t->add_option("--workers", train.cfg.population, "population size")->capture_default_str();
  t->add_option("--interval", train.cfg.interval, "env steps between perturbation events")
      ->capture_default_str();
  t->add_option("--steps", train.cfg.total_steps, "per-member step budget")->capture_default_str();
  t->add_option("--seed", train.cfg.seed, "run seed")->capture_default_str();
  t->add_option("--hidden-width", train.cfg.hidden_width, "policy hidden layer width")
      ->capture_default_str();
  t->add_option("--outdir", train.cfg.outdir, "run directory")->capture_default_str();
  t->add_option("--instances", train.cfg.n_instances, "training context count")
      ->capture_default_str();
  t->add_flag("--async", train.cfg.async_mode, "asynchronous scheduling (not deterministic)");
  t->add_flag("--normalize-context", train.cfg.normalize_context,
              "divide visible context values by |default|");

  ReplayArgs replay;
  auto* r = app.add_subcommand("replay", "Re-train found schedules on fresh seeds");
  r->add_option("--schedules", replay.schedules_path, "schedules.json from a training run")
      ->required();
  r->add_option("--eval-seeds", replay.eval_seeds, "fresh seeds (default: train seed + 1..5)");
  r->add_option("--outdir", replay.outdir, "report directory")->capture_default_str();
  r->add_option("--hidden-width", replay.hidden_width, "override policy width (e.g. 256)");
  r->add_option("--member", replay.member, "replay only this lineage");
  r->add_flag("--include-truncated", replay.include_truncated, "replay truncated lineages too");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a run's final checkpoints");
  e->add_option("--outdir", eval.rundir, "training run directory")->required();
  e->add_option("--checkpoint", eval.checkpoint, "evaluate a single checkpoint file");
  e->add_option("--episodes", eval.episodes, "episodes per instance")->capture_default_str();
  e->add_option("--seed", eval.seed, "evaluation seed")->capture_default_str();

  PlotArgs plot;
  auto* p = app.add_subcommand("plot", "Render metrics.csv or a replay report as SVG");
  p->add_option("--input", plot.input, "metrics.csv or replay_member_*.json")->required();
  p->add_option("--output", plot.output, "output SVG path")->capture_default_str();
  p->add_flag("--band", plot.band, "draw mean +- standard error band");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return static_cast<int>(ExitCode::InvalidConfig);
  }

  try {
    if (*t) return cmd_train(train);
    if (*r) return cmd_replay(replay);
    if (*e) return cmd_eval(eval);
    if (*p) return cmd_plot(plot);
  } catch (const invalid_config& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return static_cast<int>(ExitCode::InvalidConfig);
  } catch (const parse_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return static_cast<int>(ExitCode::InvalidConfig);
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return static_cast<int>(ExitCode::InvalidConfig);
  } catch (const io_error& ex) {
    std::cerr << "io error: " << ex.what() << "\n";
    return static_cast<int>(ExitCode::Io);
  } catch (const numeric_error& ex) {
    std::cerr << "numeric error: " << ex.what() << "\n";
    return static_cast<int>(ExitCode::Numeric);
  }
  return 0;
}
