#include "ctxtune/pb2.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ctxtune/agents.hpp"
#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"

namespace ctxtune {

HyperparamSpace HyperparamSpace::ddpg() {
  HyperparamSpace s;
  s.dims = {{"learning_rate", HyperDdpg::kLrLo, HyperDdpg::kLrHi},
            {"gamma", HyperDdpg::kGammaLo, HyperDdpg::kGammaHi},
            {"tau", HyperDdpg::kTauLo, HyperDdpg::kTauHi}};
  s.initial = HyperDdpg{}.as_vector();
  return s;
}

HyperparamSpace HyperparamSpace::ppo() {
  HyperparamSpace s;
  s.dims = {{"learning_rate", HyperPpo::kLrLo, HyperPpo::kLrHi},
            {"gamma", HyperPpo::kGammaLo, HyperPpo::kGammaHi},
            {"ent_coef", HyperPpo::kEntLo, HyperPpo::kEntHi},
            {"vf_coef", HyperPpo::kVfLo, HyperPpo::kVfHi},
            {"max_grad_norm", HyperPpo::kMgnLo, HyperPpo::kMgnHi},
            {"gae_lambda", HyperPpo::kLambdaLo, HyperPpo::kLambdaHi}};
  s.initial = HyperPpo{}.as_vector();
  return s;
}

HyperparamSpace HyperparamSpace::for_algorithm(const std::string& name) {
  if (name == "ddpg") return ddpg();
  if (name == "ppo") return ppo();
  throw invalid_config("unknown algorithm '" + name + "'");
}

bool HyperparamSpace::contains(const Eigen::VectorXd& hp) const {
  if (hp.size() != size()) return false;
  for (int d = 0; d < size(); ++d)
    if (!(hp[d] >= dims[static_cast<std::size_t>(d)].lower &&
          hp[d] <= dims[static_cast<std::size_t>(d)].upper))
      return false;
  return true;
}

Eigen::VectorXd HyperparamSpace::normalize(const Eigen::VectorXd& hp) const {
  if (hp.size() != size()) throw std::invalid_argument("normalize: dimension mismatch");
  if (!contains(hp)) throw std::invalid_argument("normalize: hyperparameters outside the box");
  Eigen::VectorXd u(size());
  for (int d = 0; d < size(); ++d) {
    const auto& dim = dims[static_cast<std::size_t>(d)];
    u[d] = (hp[d] - dim.lower) / (dim.upper - dim.lower);
  }
  return u;
}

Eigen::VectorXd HyperparamSpace::denormalize(const Eigen::VectorXd& unit) const {
  if (unit.size() != size()) throw std::invalid_argument("denormalize: dimension mismatch");
  Eigen::VectorXd hp(size());
  for (int d = 0; d < size(); ++d) {
    const auto& dim = dims[static_cast<std::size_t>(d)];
    const double u = std::clamp(unit[d], 0.0, 1.0);
    hp[d] = dim.lower + u * (dim.upper - dim.lower);
  }
  return hp;
}

double score_improvement(const std::vector<double>& score_history) {
  if (score_history.empty()) throw std::invalid_argument("score_improvement: empty history");
  if (score_history.size() == 1) return score_history.back();
  return score_history.back() - score_history[score_history.size() - 2];
}

void Pb2Config::validate() const {
  if (population < 2) throw invalid_config("pb2: population must be >= 2");
  if (interval < 1) throw invalid_config("pb2: interval must be >= 1");
  if (!(exploit_quantile > 0.0 && exploit_quantile <= 0.5))
    throw invalid_config("pb2: exploit quantile must be in (0, 0.5]");
  if (total_steps < 1) throw invalid_config("pb2: total steps must be >= 1");
  if (observation_window < 1) throw invalid_config("pb2: observation window must be >= 1");
}

Pb2Scheduler::Pb2Scheduler(Pb2Config cfg, HyperparamSpace space)
    : cfg_(std::move(cfg)), space_(std::move(space)) {
  cfg_.validate();
  if (!space_.contains(space_.initial))
    throw invalid_config("pb2: initial point outside the hyperparameter box");
}

Pb2RunResult Pb2Scheduler::run(const std::vector<Trainable*>& members) {
  if (static_cast<int>(members.size()) != cfg_.population)
    throw invalid_config("pb2: member count does not match configured population");
  return cfg_.async_mode ? run_asynchronous(members) : run_synchronous(members);
}

namespace {

// Scores ranked best-first; ties broken toward the lower member id so runs
// are reproducible.
std::vector<int> rank_members(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  return order;
}

std::vector<BanditObservation> window_tail(const std::vector<BanditObservation>& obs, int window) {
  if (static_cast<int>(obs.size()) <= window) return obs;
  return {obs.end() - window, obs.end()};
}

}  // namespace

Pb2RunResult Pb2Scheduler::run_synchronous(const std::vector<Trainable*>& members) {
  const int n = cfg_.population;
  const int dim = space_.size();
  Pb2RunResult result;
  result.schedules.resize(static_cast<std::size_t>(n));

  std::vector<std::vector<double>> history(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    members[static_cast<std::size_t>(m)]->set_hyperparams(space_.initial);
    auto& sched = result.schedules[static_cast<std::size_t>(m)];
    sched.member = m;
    sched.entries.push_back({0, m, space_.initial, std::nullopt, std::nullopt});
  }

  Rng donor_rng(derive_seed(cfg_.seed, 0xd0));
  long done = 0;
  int generation = 0;
  while (done < cfg_.total_steps) {
    const long steps = std::min(cfg_.interval, cfg_.total_steps - done);
    ++generation;

    // One lane per member; each lane is self-contained, so the barrier makes
    // the merge order (and the whole run) deterministic.
    std::vector<double> scores(static_cast<std::size_t>(n));
    {
      std::vector<std::future<double>> lanes;
      lanes.reserve(static_cast<std::size_t>(n));
      for (int m = 0; m < n; ++m)
        lanes.push_back(std::async(std::launch::async,
                                   [&, m] { return members[static_cast<std::size_t>(m)]->run_interval(steps); }));
      for (int m = 0; m < n; ++m) scores[static_cast<std::size_t>(m)] = lanes[static_cast<std::size_t>(m)].get();
    }
    done += steps;

    for (int m = 0; m < n; ++m) {
      history[static_cast<std::size_t>(m)].push_back(scores[static_cast<std::size_t>(m)]);
      BanditObservation o;
      o.t = generation;
      o.x = space_.normalize(members[static_cast<std::size_t>(m)]->hyperparams());
      o.y = score_improvement(history[static_cast<std::size_t>(m)]);
      result.observations.push_back(std::move(o));
      if (metrics_hook_)
        metrics_hook_(done, m, scores[static_cast<std::size_t>(m)],
                      members[static_cast<std::size_t>(m)]->hyperparams());
    }

    if (done >= cfg_.total_steps) break;  // nothing left to adapt for

    const auto ranked = rank_members(scores);
    const int k = static_cast<int>(std::ceil(cfg_.exploit_quantile * n));
    std::vector<bool> is_bottom(static_cast<std::size_t>(n), false);
    for (int i = 0; i < k; ++i) is_bottom[static_cast<std::size_t>(ranked[static_cast<std::size_t>(n - 1 - i)])] = true;

    const GpModel model = GpModel::fit(window_tail(result.observations, cfg_.observation_window), dim);
    if (gp_hook_) gp_hook_(generation, model);

    // Donor checkpoints are captured at the barrier, before any replacement.
    std::vector<Eigen::VectorXd> pending;
    for (int m = 0; m < n; ++m) {
      auto& sched = result.schedules[static_cast<std::size_t>(m)];
      if (!is_bottom[static_cast<std::size_t>(m)]) {
        sched.entries.push_back({done, m, members[static_cast<std::size_t>(m)]->hyperparams(),
                                 std::nullopt, scores[static_cast<std::size_t>(m)]});
        continue;
      }
      const int donor = ranked[static_cast<std::size_t>(donor_rng.uniform_int(k))];
      const std::string blob = members[static_cast<std::size_t>(donor)]->save_state();
      members[static_cast<std::size_t>(m)]->load_state(blob);

      const Eigen::VectorXd unit = suggest(model, generation, dim, pending, cfg_.acquisition,
                                           derive_seed(cfg_.seed, 0xba, static_cast<std::uint64_t>(generation),
                                                       static_cast<std::uint64_t>(m)));
      pending.push_back(unit);
      const Eigen::VectorXd hp = space_.denormalize(unit);
      members[static_cast<std::size_t>(m)]->set_hyperparams(hp);
      sched.entries.push_back({done, m, hp, donor, scores[static_cast<std::size_t>(m)]});

      ExploitEvent ev;
      ev.generation = generation;
      ev.member = m;
      ev.parent = donor;
      if (cfg_.record_event_blobs) {
        ev.donor_blob = blob;
        ev.member_blob_after = members[static_cast<std::size_t>(m)]->save_state();
      }
      result.events.push_back(std::move(ev));
    }
  }
  result.generations = generation;
  return result;
}

Pb2RunResult Pb2Scheduler::run_asynchronous(const std::vector<Trainable*>& members) {
  const int n = cfg_.population;
  const int dim = space_.size();
  Pb2RunResult result;
  result.schedules.resize(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    members[static_cast<std::size_t>(m)]->set_hyperparams(space_.initial);
    auto& sched = result.schedules[static_cast<std::size_t>(m)];
    sched.member = m;
    sched.entries.push_back({0, m, space_.initial, std::nullopt, std::nullopt});
  }

  std::mutex mu;
  std::vector<std::vector<double>> history(static_cast<std::size_t>(n));
  std::vector<double> latest(static_cast<std::size_t>(n), 0.0);
  std::vector<bool> has_score(static_cast<std::size_t>(n), false);
  // Exploits copy the donor's checkpoint from its last barrier, never its
  // live state; the donor's lane may be mid-interval on another thread.
  std::vector<std::string> checkpoints(static_cast<std::size_t>(n));
  Rng donor_rng(derive_seed(cfg_.seed, 0xad));
  int event_counter = 0;

  auto lane = [&](int m) {
    long done = 0;
    int interval_idx = 0;
    while (done < cfg_.total_steps) {
      const long steps = std::min(cfg_.interval, cfg_.total_steps - done);
      const double score = members[static_cast<std::size_t>(m)]->run_interval(steps);
      done += steps;
      ++interval_idx;

      std::lock_guard<std::mutex> lock(mu);
      history[static_cast<std::size_t>(m)].push_back(score);
      latest[static_cast<std::size_t>(m)] = score;
      has_score[static_cast<std::size_t>(m)] = true;
      checkpoints[static_cast<std::size_t>(m)] = members[static_cast<std::size_t>(m)]->save_state();

      BanditObservation o;
      o.t = interval_idx;
      o.x = space_.normalize(members[static_cast<std::size_t>(m)]->hyperparams());
      o.y = score_improvement(history[static_cast<std::size_t>(m)]);
      result.observations.push_back(std::move(o));
      if (metrics_hook_) metrics_hook_(done, m, score, members[static_cast<std::size_t>(m)]->hyperparams());
      if (done >= cfg_.total_steps) return;

      // Rank against whatever scores exist right now; stale is acceptable in
      // async mode.
      std::vector<int> known;
      for (int i = 0; i < n; ++i)
        if (has_score[static_cast<std::size_t>(i)]) known.push_back(i);
      if (known.size() < 2) {
        result.schedules[static_cast<std::size_t>(m)].entries.push_back(
            {done, m, members[static_cast<std::size_t>(m)]->hyperparams(), std::nullopt, score});
        continue;
      }
      std::stable_sort(known.begin(), known.end(), [&](int a, int b) {
        if (latest[static_cast<std::size_t>(a)] != latest[static_cast<std::size_t>(b)])
          return latest[static_cast<std::size_t>(a)] > latest[static_cast<std::size_t>(b)];
        return a < b;
      });
      const int k = static_cast<int>(std::ceil(cfg_.exploit_quantile * static_cast<double>(known.size())));
      const bool in_bottom =
          std::find(known.end() - k, known.end(), m) != known.end();
      if (!in_bottom) {
        result.schedules[static_cast<std::size_t>(m)].entries.push_back(
            {done, m, members[static_cast<std::size_t>(m)]->hyperparams(), std::nullopt, score});
        continue;
      }
      const int donor = known[static_cast<std::size_t>(donor_rng.uniform_int(k))];
      if (donor == m) {
        result.schedules[static_cast<std::size_t>(m)].entries.push_back(
            {done, m, members[static_cast<std::size_t>(m)]->hyperparams(), std::nullopt, score});
        continue;
      }
      const std::string blob = checkpoints[static_cast<std::size_t>(donor)];
      members[static_cast<std::size_t>(m)]->load_state(blob);
      const GpModel model = GpModel::fit(window_tail(result.observations, cfg_.observation_window), dim);
      const Eigen::VectorXd unit = suggest(model, interval_idx, dim, {}, cfg_.acquisition,
                                           derive_seed(cfg_.seed, 0xbb, static_cast<std::uint64_t>(++event_counter)));
      const Eigen::VectorXd hp = space_.denormalize(unit);
      members[static_cast<std::size_t>(m)]->set_hyperparams(hp);
      result.schedules[static_cast<std::size_t>(m)].entries.push_back({done, m, hp, donor, score});

      ExploitEvent ev;
      ev.generation = interval_idx;
      ev.member = m;
      ev.parent = donor;
      if (cfg_.record_event_blobs) {
        ev.donor_blob = blob;
        ev.member_blob_after = members[static_cast<std::size_t>(m)]->save_state();
      }
      result.events.push_back(std::move(ev));
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) threads.emplace_back(lane, m);
  for (auto& t : threads) t.join();
  result.generations = (cfg_.total_steps + cfg_.interval - 1) / cfg_.interval;
  return result;
}

// ---------------------------------------------------------------------------
// schedules.json

namespace {

nlohmann::json entry_to_json(const ScheduleEntry& e, const HyperparamSpace& space) {
  nlohmann::json j;
  j["step"] = e.step;
  nlohmann::json hp;
  for (int d = 0; d < space.size(); ++d)
    hp[space.dims[static_cast<std::size_t>(d)].name] = e.hyperparams[d];
  j["hyperparams"] = hp;
  if (e.parent)
    j["parent"] = *e.parent;
  else
    j["parent"] = nullptr;
  if (e.score)
    j["score"] = *e.score;
  else
    j["score"] = nullptr;
  return j;
}

}  // namespace

std::string schedules_to_json(const std::vector<MemberSchedule>& schedules,
                              const HyperparamSpace& space, long interval,
                              const std::string& meta_json) {
  nlohmann::json j;
  j["version"] = 1;
  j["interval"] = interval;
  if (!meta_json.empty()) j["meta"] = nlohmann::json::parse(meta_json);

  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : space.dims)
    dims.push_back({{"name", d.name}, {"lower", d.lower}, {"upper", d.upper}});
  nlohmann::json initial;
  for (int d = 0; d < space.size(); ++d)
    initial[space.dims[static_cast<std::size_t>(d)].name] = space.initial[d];
  j["space"] = {{"dims", dims}, {"initial", initial}};

  nlohmann::json lineages = nlohmann::json::array();
  for (const auto& s : schedules) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : s.entries) entries.push_back(entry_to_json(e, space));
    lineages.push_back({{"member", s.member}, {"truncated", s.truncated}, {"entries", entries}});
  }
  j["schedules"] = lineages;
  return j.dump(2);
}

ImportedSchedules schedules_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(std::string("schedules.json: ") + e.what());
  }

  ImportedSchedules out;
  out.interval = j.at("interval").get<long>();
  if (j.contains("meta")) out.meta_json = j.at("meta").dump();

  for (const auto& d : j.at("space").at("dims")) {
    HyperparamDim dim;
    dim.name = d.at("name").get<std::string>();
    dim.lower = d.at("lower").get<double>();
    dim.upper = d.at("upper").get<double>();
    out.space.dims.push_back(std::move(dim));
  }
  out.space.initial.resize(out.space.size());
  for (int d = 0; d < out.space.size(); ++d)
    out.space.initial[d] =
        j.at("space").at("initial").at(out.space.dims[static_cast<std::size_t>(d)].name).get<double>();

  for (const auto& s : j.at("schedules")) {
    MemberSchedule ms;
    ms.member = s.at("member").get<int>();
    ms.truncated = s.at("truncated").get<bool>();
    for (const auto& e : s.at("entries")) {
      ScheduleEntry entry;
      entry.step = e.at("step").get<long>();
      entry.member = ms.member;
      entry.hyperparams.resize(out.space.size());
      for (int d = 0; d < out.space.size(); ++d)
        entry.hyperparams[d] =
            e.at("hyperparams").at(out.space.dims[static_cast<std::size_t>(d)].name).get<double>();
      if (!e.at("parent").is_null()) entry.parent = e.at("parent").get<int>();
      if (!e.at("score").is_null()) entry.score = e.at("score").get<double>();
      ms.entries.push_back(std::move(entry));
    }
    out.schedules.push_back(std::move(ms));
  }
  return out;
}

}  // namespace ctxtune
