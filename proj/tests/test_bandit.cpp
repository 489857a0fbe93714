#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctxtune/bandit.hpp"
#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"
#include "oracles.hpp"

using namespace ctxtune;

namespace {

Eigen::VectorXd unit_vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

std::vector<BanditObservation> random_observations(int n, int dim, Rng& rng) {
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

GpParams fixed_params(int dim, double epsilon = 0.1, double noise = 1e-2) {
  GpParams p;
  p.signal_var = 1.0;
  p.noise_var = noise;
  p.epsilon = epsilon;
  p.lengthscales = Eigen::VectorXd::Constant(dim, 0.4);
  return p;
}

}  // namespace

TEST_CASE("covariance decays monotonically in |t - t'| when epsilon > 0") {
  const GpParams p = fixed_params(2, 0.2);
  const Eigen::VectorXd x = unit_vec({0.4, 0.6});
  double prev = gp_kernel(p, x, 0.0, x, 0.0);
  for (int dt = 1; dt <= 10; ++dt) {
    const double k = gp_kernel(p, x, 0.0, x, static_cast<double>(dt));
    CHECK(k < prev);
    prev = k;
  }
}

TEST_CASE("epsilon = 0 makes the model stationary in t") {
  Rng rng(41);
  const auto obs = random_observations(6, 2, rng);
  const GpModel m = GpModel::fit_with_params(obs, 2, fixed_params(2, 0.0));
  const Eigen::VectorXd q = unit_vec({0.3, 0.8});
  const auto [m0, v0] = m.posterior(0, q);
  const auto [m9, v9] = m.posterior(900, q);
  CHECK(m0 == m9);
  CHECK(v0 == v9);
}

TEST_CASE("single-observation posterior follows the 1-point formula") {
  BanditObservation o;
  o.t = 0;
  o.x = unit_vec({0.3});
  o.y = 0.7;
  const GpParams p = fixed_params(1, 0.1, 0.01);
  const GpModel m = GpModel::fit_with_params({o}, 1, p, /*standardize=*/false);
  const auto [mean, var] = m.posterior(0, o.x);
  // k/(k + noise) * y with k = signal variance at the training point.
  CHECK(mean == doctest::Approx(1.0 / 1.01 * 0.7).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0 - 1.0 / 1.01).epsilon(1e-10));

  // The standardizing fit maps a single y to 0 (degenerate spread), with the
  // unit-noise fallback flagged.
  const GpModel std_fit = GpModel::fit({o}, 1);
  CHECK(std_fit.diagnostics().unit_noise_fallback);
  CHECK(std_fit.params().noise_var == 1.0);
  CHECK(std_fit.posterior(0, o.x).first == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("posterior and lml match a dense eigen-solve oracle to 1e-8") {
  Rng rng(42);
  for (int n = 1; n <= 8; ++n) {
    const auto obs = random_observations(n, 3, rng);

    // Fixed kernel hyperparameters, raw targets.
    const GpParams p = fixed_params(3, 0.15, 1e-2);
    const GpModel m = GpModel::fit_with_params(obs, 3, p, /*standardize=*/false);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = obs[static_cast<std::size_t>(i)].y;

    for (int trial = 0; trial < 4; ++trial) {
      Eigen::VectorXd q(3);
      for (int d = 0; d < 3; ++d) q[d] = rng.uniform();
      const int qt = static_cast<int>(rng.uniform_int(10));
      const auto [mean, var] = m.posterior(qt, q);
      const oracles::DenseGpResult ref =
          oracles::dense_gp(obs, y, p, m.diagnostics().jitter, qt, q);
      CHECK(std::abs(mean - ref.mean) <= 1e-8);
      CHECK(std::abs(var - std::max(0.0, ref.variance)) <= 1e-8);
    }
    const oracles::DenseGpResult ref0 =
        oracles::dense_gp(obs, y, p, m.diagnostics().jitter, 0, obs.front().x);
    CHECK(std::abs(m.log_marginal_likelihood() - ref0.lml) <= 1e-8);

    // Grid-fitted hyperparameters, standardized targets.
    const GpModel g = GpModel::fit(obs, 3);
    const oracles::DenseGpResult refg = oracles::dense_gp(
        obs, g.targets(), g.params(), g.diagnostics().jitter, 3, obs.front().x);
    const auto [gm, gv] = g.posterior(3, obs.front().x);
    CHECK(std::abs(gm - refg.mean) <= 1e-8);
    CHECK(std::abs(gv - std::max(0.0, refg.variance)) <= 1e-8);
    CHECK(std::abs(g.log_marginal_likelihood() - refg.lml) <= 1e-8);
  }
}

TEST_CASE("posterior variance is non-negative and vanishes at noiseless points") {
  Rng rng(43);
  const auto obs = random_observations(6, 2, rng);
  const GpModel noisy = GpModel::fit(obs, 2);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd q(2);
    q << rng.uniform(), rng.uniform();
    CHECK(noisy.posterior(static_cast<int>(rng.uniform_int(8)), q).second >= 0.0);
  }

  const GpModel clean = GpModel::fit_with_params(obs, 2, fixed_params(2, 0.0, 1e-10),
                                                 /*standardize=*/false);
  for (const auto& o : obs) {
    const auto [mean, var] = clean.posterior(o.t, o.x);
    CHECK(std::abs(mean - o.y) <= 1e-4);
    CHECK(var <= 1e-4);
  }
}

TEST_CASE("all-identical targets trigger the unit-noise fallback") {
  Rng rng(44);
  auto obs = random_observations(5, 2, rng);
  for (auto& o : obs) o.y = 3.25;
  const GpModel m = GpModel::fit(obs, 2);
  CHECK(m.diagnostics().unit_noise_fallback);
  CHECK(m.params().noise_var == 1.0);
  Eigen::VectorXd q(2);
  q << 0.5, 0.5;
  CHECK(std::isfinite(m.posterior(0, q).first));
}

TEST_CASE("non-finite inputs surface as numeric errors") {
  Rng rng(45);
  auto obs = random_observations(3, 2, rng);
  obs[1].x[0] = std::nan("");
  CHECK_THROWS_AS(GpModel::fit_with_params(obs, 2, fixed_params(2)), numeric_error);
}

TEST_CASE("empty model: prior posterior and reproducible uniform suggestion") {
  const GpModel m = GpModel::empty(3);
  const auto [mean, var] = m.posterior(0, unit_vec({0.1, 0.2, 0.3}));
  CHECK(mean == 0.0);
  CHECK(var == m.params().signal_var);

  AcquisitionConfig cfg;
  const Eigen::VectorXd a = suggest(m, 0, 3, {}, cfg, 777);
  const Eigen::VectorXd b = suggest(m, 0, 3, {}, cfg, 777);
  CHECK(a == b);
  for (int d = 0; d < 3; ++d) {
    CHECK(a[d] >= 0.0);
    CHECK(a[d] <= 1.0);
  }
  CHECK(suggest(m, 0, 3, {}, cfg, 778) != a);
}

TEST_CASE("kappa = 0 exploits the best observed region on a 1-d toy") {
  std::vector<BanditObservation> obs;
  for (double x : {0.1, 0.35, 0.6, 0.85}) {
    BanditObservation o;
    o.t = 0;
    o.x = unit_vec({x});
    o.y = -(x - 0.6) * (x - 0.6);
    obs.push_back(std::move(o));
  }
  GpParams p = fixed_params(1, 0.0, 1e-4);
  p.lengthscales[0] = 0.2;
  const GpModel m = GpModel::fit_with_params(obs, 1, p);
  AcquisitionConfig cfg;
  cfg.kappa = 0.0;
  cfg.candidates = 512;
  const Eigen::VectorXd x = suggest(m, 0, 1, {}, cfg, 99);
  CHECK(std::abs(x[0] - 0.6) <= 0.1);
}

TEST_CASE("suggestions are deterministic given observations, seed and config") {
  Rng rng(46);
  const auto obs = random_observations(10, 2, rng);
  const GpModel m = GpModel::fit(obs, 2);
  AcquisitionConfig cfg;
  const Eigen::VectorXd a = suggest(m, 4, 2, {}, cfg, 31337);
  const Eigen::VectorXd b = suggest(m, 4, 2, {}, cfg, 31337);
  CHECK(a == b);
}

TEST_CASE("hallucinated pending points reduce the posterior variance there") {
  Rng rng(47);
  const auto obs = random_observations(6, 2, rng);
  const GpModel m = GpModel::fit(obs, 2);
  const Eigen::VectorXd pending = unit_vec({0.77, 0.23});
  const double before = m.posterior(7, pending).second;
  const GpModel with = m.with_pending({{7, pending}});
  const double after = with.posterior(7, pending).second;
  CHECK(after < before);
}

TEST_CASE("kappa schedule grows with t and falls back to the constant") {
  AcquisitionConfig cfg;
  cfg.kappa = 2.0;
  CHECK(ucb_kappa(cfg, 50, 3) == 2.0);
  cfg.kappa_schedule = true;
  const double k1 = ucb_kappa(cfg, 1, 3);
  const double k10 = ucb_kappa(cfg, 10, 3);
  CHECK(k1 == doctest::Approx(std::sqrt(2.0 * std::log(3.0 * 1.0 * M_PI * M_PI / 0.6))));
  CHECK(k10 > k1);
}

TEST_CASE("a short UCB loop closes in on a synthetic optimum") {
  // 30 rounds on y = -(x - 0.7)^2 + noise; the full 20-seed benchmark runs in
  // the acceptance suite, this is a quick regression canary.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng noise(derive_seed(seed, 0x5e));
    std::vector<BanditObservation> obs;
    AcquisitionConfig cfg;
    double best_x = -1.0, best_y = -1e300;
    for (int t = 1; t <= 30; ++t) {
      const GpModel m = obs.empty() ? GpModel::empty(1) : GpModel::fit(obs, 1);
      const Eigen::VectorXd x = suggest(m, t, 1, {}, cfg, derive_seed(seed, 0xac, t));
      const double y = -(x[0] - 0.7) * (x[0] - 0.7) + 0.01 * noise.normal();
      if (y > best_y) {
        best_y = y;
        best_x = x[0];
      }
      BanditObservation o;
      o.t = t;
      o.x = x;
      o.y = y;
      obs.push_back(std::move(o));
    }
    CHECK(std::abs(best_x - 0.7) <= 0.1);
  }
}
