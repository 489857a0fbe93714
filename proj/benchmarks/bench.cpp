#include <benchmark/benchmark.h>

#include "ctxtune/agents.hpp"
#include "ctxtune/bandit.hpp"
#include "ctxtune/envs.hpp"
#include "ctxtune/nn.hpp"
#include "ctxtune/rng.hpp"

using namespace ctxtune;

namespace {

Context default_context(const Env& env) {
  Context ctx;
  for (const ContextFeature& f : env.spec().features) ctx.assignments[f.name] = f.default_value;
  return ctx;
}

void BM_PendulumStep(benchmark::State& state) {
  PendulumEnv env;
  env.reset(default_context(env), 1);
  Eigen::VectorXd u(1);
  u << 0.5;
  long steps = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(env.step(u));
    if (++steps % 200 == 0) env.reset(default_context(env), 1);
  }
}
BENCHMARK(BM_PendulumStep);

void BM_AcrobotStep(benchmark::State& state) {
  AcrobotEnv env;
  env.reset(default_context(env), 1);
  long steps = 0;
  for (auto _ : state) {
    const StepResult r = env.step(ActionValue{2});
    benchmark::DoNotOptimize(r.reward);
    if (r.terminated || r.truncated || ++steps % 500 == 0)
      env.reset(default_context(env), 1);
  }
}
BENCHMARK(BM_AcrobotStep);

void BM_LanderStep(benchmark::State& state) {
  LanderEnv env;
  env.reset(default_context(env), 1);
  for (auto _ : state) {
    const StepResult r = env.step(ActionValue{2});
    benchmark::DoNotOptimize(r.reward);
    if (r.terminated || r.truncated) env.reset(default_context(env), 1);
  }
}
BENCHMARK(BM_LanderStep);

void BM_MlpForwardBatch128(benchmark::State& state) {
  const Mlp net = Mlp::create({4, 64, 64, 1}, Activation::Tanh, Activation::Identity, 1);
  const Eigen::MatrixXd batch = Eigen::MatrixXd::Random(4, 128);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(batch));
}
BENCHMARK(BM_MlpForwardBatch128);

void BM_MlpBackwardBatch128(benchmark::State& state) {
  const Mlp net = Mlp::create({4, 64, 64, 1}, Activation::Tanh, Activation::Identity, 1);
  const Eigen::MatrixXd batch = Eigen::MatrixXd::Random(4, 128);
  const Eigen::MatrixXd upstream = Eigen::MatrixXd::Random(1, 128);
  for (auto _ : state) benchmark::DoNotOptimize(net.backward(batch, upstream));
}
BENCHMARK(BM_MlpBackwardBatch128);

void BM_DdpgUpdate(benchmark::State& state) {
  DdpgConfig cfg;
  cfg.obs_dim = 3;
  cfg.action_dim = 1;
  cfg.action_low = -2;
  cfg.action_high = 2;
  cfg.seed = 1;
  DdpgAgent agent(cfg);
  ReplayBuffer buf(4096);
  Rng rng(2);
  Eigen::VectorXd o(3), a(1);
  for (int i = 0; i < 1024; ++i) {
    for (int k = 0; k < 3; ++k) o[k] = rng.normal();
    a[0] = rng.uniform(-2, 2);
    buf.push(o, a, rng.normal(), o, false);
  }
  for (auto _ : state) {
    const auto batch = buf.sample(128, rng);
    benchmark::DoNotOptimize(agent.update(batch));
  }
}
BENCHMARK(BM_DdpgUpdate);

void BM_GaeLength2048(benchmark::State& state) {
  Rng rng(3);
  Eigen::VectorXd r(2048), v(2048), d(2048);
  for (int t = 0; t < 2048; ++t) {
    r[t] = rng.normal();
    v[t] = rng.normal();
    d[t] = rng.uniform() < 0.01 ? 1.0 : 0.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(compute_gae(r, v, d, 0.1, 0.99, 0.95));
}
BENCHMARK(BM_GaeLength2048);

std::vector<BanditObservation> bandit_observations(int n, int dim) {
  Rng rng(4);
  std::vector<BanditObservation> obs;
  for (int i = 0; i < n; ++i) {
    BanditObservation o;
    o.t = i;
    o.x.resize(dim);
    for (int d = 0; d < dim; ++d) o.x[d] = rng.uniform();
    o.y = rng.normal();
    obs.push_back(std::move(o));
  }
  return obs;
}

void BM_GpFit64x6(benchmark::State& state) {
  const auto obs = bandit_observations(64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(GpModel::fit(obs, 6));
}
BENCHMARK(BM_GpFit64x6);

void BM_GpSuggest(benchmark::State& state) {
  const auto obs = bandit_observations(64, 6);
  const GpModel model = GpModel::fit(obs, 6);
  const AcquisitionConfig cfg;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(suggest(model, 65, 6, {}, cfg, ++seed));
}
BENCHMARK(BM_GpSuggest);

}  // namespace

BENCHMARK_MAIN();
