#include "ctxtune/bandit.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"

namespace ctxtune {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMaxJitter = 1e-4;

Eigen::MatrixXd kernel_matrix(const GpParams& p, const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = gp_kernel(p, x.col(i), t[i], x.col(j), t[j]);
      k(i, j) = v;
      k(j, i) = v;
    }
  return k;
}

// Log marginal likelihood at fixed kernel hyperparameters, or -inf when the
// factorization fails even with maximum jitter.
double lml_at(const GpParams& p, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
              const Eigen::VectorXd& y) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd k = kernel_matrix(p, x, t);
  k.diagonal().array() += p.noise_var;
  Eigen::LLT<Eigen::MatrixXd> chol(k);
  double jitter = 1e-12;
  while (chol.info() != Eigen::Success && jitter <= kMaxJitter) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    chol.compute(kj);
    jitter *= 10.0;
  }
  if (chol.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = chol.solve(y);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(chol.matrixLLT()(i, i));
  return -0.5 * y.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * kPi);
}

}  // namespace

double gp_kernel(const GpParams& p, const Eigen::VectorXd& x1, double t1,
                 const Eigen::VectorXd& x2, double t2) {
  double sq = 0.0;
  for (Eigen::Index d = 0; d < x1.size(); ++d) {
    const double z = (x1[d] - x2[d]) / p.lengthscales[d];
    sq += z * z;
  }
  const double space = p.signal_var * std::exp(-0.5 * sq);
  const double time = std::pow(1.0 - p.epsilon, std::abs(t1 - t2) / 2.0);
  return space * time;
}

GpModel GpModel::empty(int dim) {
  GpModel m;
  m.dim_ = dim;
  m.params_.lengthscales = Eigen::VectorXd::Constant(dim, 0.5);
  return m;
}

GpModel GpModel::fit_with_params(const std::vector<BanditObservation>& obs, int dim,
                                 const GpParams& params, bool standardize) {
  if (obs.empty()) throw std::invalid_argument("gp fit: need at least one observation");
  if (params.lengthscales.size() != dim)
    throw std::invalid_argument("gp fit: lengthscales dimension mismatch");

  GpModel m;
  m.dim_ = dim;
  m.params_ = params;
  const auto n = static_cast<Eigen::Index>(obs.size());
  m.x_.resize(dim, n);
  m.t_.resize(n);
  m.y_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    if (o.x.size() != dim) throw std::invalid_argument("gp fit: observation dimension mismatch");
    if (!o.x.allFinite() || !std::isfinite(o.y))
      throw numeric_error("gp fit: non-finite observation");
    m.x_.col(i) = o.x;
    m.t_[i] = o.t;
    m.y_[i] = o.y;
  }

  if (standardize) {
    const double mean = m.y_.mean();
    double sd = std::sqrt((m.y_.array() - mean).square().mean());
    if (sd < 1e-12) {
      // Degenerate targets carry no signal; fall back to unit noise so the
      // posterior stays numerically sane.
      sd = 1.0;
      m.params_.noise_var = 1.0;
      m.diag_.unit_noise_fallback = true;
    }
    m.y_ = (m.y_.array() - mean) / sd;
  }

  m.factorize();
  m.diag_.log_marginal_likelihood = lml_at(m.params_, m.x_, m.t_, m.y_);
  return m;
}

void GpModel::factorize() {
  Eigen::MatrixXd k = kernel_matrix(params_, x_, t_);
  k.diagonal().array() += params_.noise_var;
  chol_.compute(k);
  double jitter = 1e-12;
  while (chol_.info() != Eigen::Success && jitter <= kMaxJitter) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    chol_.compute(kj);
    diag_.jitter = jitter;
    jitter *= 10.0;
  }
  if (chol_.info() != Eigen::Success)
    throw numeric_error("gp: kernel matrix not positive definite even with jitter 1e-4");
  alpha_ = chol_.solve(y_);
}

GpModel GpModel::fit(const std::vector<BanditObservation>& obs, int dim) {
  if (obs.empty()) throw std::invalid_argument("gp fit: need at least one observation");

  // Standardize once; the grid search sees the standardized targets.
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd x(dim, n);
  Eigen::VectorXd t(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    if (o.x.size() != dim) throw std::invalid_argument("gp fit: observation dimension mismatch");
    x.col(i) = o.x;
    t[i] = o.t;
    y[i] = o.y;
  }
  const double mean = y.mean();
  double sd = std::sqrt((y.array() - mean).square().mean());
  bool fallback = false;
  if (sd < 1e-12) {
    sd = 1.0;
    fallback = true;
  }
  const Eigen::VectorXd ys = (y.array() - mean) / sd;

  static const double kLengthscaleGrid[] = {0.1, 0.2, 0.5, 1.0, 2.0};
  static const double kSignalGrid[] = {0.25, 1.0, 4.0};
  static const double kNoiseGrid[] = {1e-4, 1e-2, 1e-1};
  static const double kEpsilonGrid[] = {0.0, 0.05, 0.2, 0.5};

  GpParams best;
  best.lengthscales = Eigen::VectorXd::Constant(dim, 0.5);
  double best_lml = -std::numeric_limits<double>::infinity();

  if (fallback) {
    best.noise_var = 1.0;
  } else {
    for (double l : kLengthscaleGrid)
      for (double sv : kSignalGrid)
        for (double nv : kNoiseGrid)
          for (double eps : kEpsilonGrid) {
            GpParams p;
            p.signal_var = sv;
            p.noise_var = nv;
            p.epsilon = eps;
            p.lengthscales = Eigen::VectorXd::Constant(dim, l);
            const double lml = lml_at(p, x, t, ys);
            if (lml > best_lml) {
              best_lml = lml;
              best = p;
            }
          }
    // Per-dimension relevance refinement: two coordinate-descent sweeps over
    // the same lengthscale grid.
    for (int sweep = 0; sweep < 2; ++sweep)
      for (int d = 0; d < dim; ++d)
        for (double l : kLengthscaleGrid) {
          GpParams p = best;
          p.lengthscales[d] = l;
          const double lml = lml_at(p, x, t, ys);
          if (lml > best_lml) {
            best_lml = lml;
            best = p;
          }
        }
  }

  GpModel m = fit_with_params(obs, dim, best, /*standardize=*/true);
  m.diag_.unit_noise_fallback = fallback;
  return m;
}

std::pair<double, double> GpModel::posterior(int t, const Eigen::VectorXd& x) const {
  if (size() == 0) return {0.0, params_.signal_var};  // prior

  const auto n = static_cast<Eigen::Index>(y_.size());
  Eigen::VectorXd kstar(n);
  for (Eigen::Index i = 0; i < n; ++i)
    kstar[i] = gp_kernel(params_, x, static_cast<double>(t), x_.col(i), t_[i]);
  const double mean = kstar.dot(alpha_);
  const Eigen::VectorXd v = chol_.solve(kstar);
  const double var = params_.signal_var - kstar.dot(v);
  return {mean, std::max(0.0, var)};
}

GpModel GpModel::with_pending(const std::vector<std::pair<int, Eigen::VectorXd>>& pending) const {
  if (pending.empty()) return *this;
  GpModel m = *this;
  const auto n = static_cast<Eigen::Index>(y_.size());
  const auto p = static_cast<Eigen::Index>(pending.size());
  m.x_.conservativeResize(dim_, n + p);
  m.t_.conservativeResize(n + p);
  m.y_.conservativeResize(n + p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const auto& [pt, px] = pending[static_cast<std::size_t>(i)];
    // Hallucinate sequentially so each pending point sees the previous ones.
    GpModel view = m;
    view.x_ = m.x_.leftCols(n + i);
    view.t_ = m.t_.head(n + i);
    view.y_ = m.y_.head(n + i);
    view.factorize();
    m.x_.col(n + i) = px;
    m.t_[n + i] = pt;
    m.y_[n + i] = view.posterior(pt, px).first;
  }
  m.factorize();
  return m;
}

double ucb_kappa(const AcquisitionConfig& cfg, int t, int dim) {
  if (!cfg.kappa_schedule) return cfg.kappa;
  const double tt = std::max(1, t);
  return std::sqrt(2.0 * std::log(static_cast<double>(dim) * tt * tt * kPi * kPi / 0.6));
}

Eigen::VectorXd suggest(const GpModel& model, int t, int dim,
                        const std::vector<Eigen::VectorXd>& pending,
                        const AcquisitionConfig& cfg, std::uint64_t seed) {
  if (cfg.candidates < 1) throw std::invalid_argument("suggest: need at least one candidate");
  Rng rng(seed);

  if (model.size() == 0) {
    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) x[d] = rng.uniform();
    return x;
  }

  GpModel scored = model;
  if (!pending.empty()) {
    std::vector<std::pair<int, Eigen::VectorXd>> halluc;
    halluc.reserve(pending.size());
    for (const auto& px : pending) halluc.emplace_back(t, px);
    scored = model.with_pending(halluc);
  }

  // Incumbent = observed input with the best (standardized) target.
  Eigen::Index best_i = 0;
  model.targets().maxCoeff(&best_i);
  const Eigen::VectorXd incumbent = model.inputs().col(best_i);

  const double kappa = ucb_kappa(cfg, t, dim);
  Eigen::VectorXd best_x;
  double best_ucb = -std::numeric_limits<double>::infinity();
  const int n_local = std::max(8, cfg.candidates / 8);
  for (int i = 0; i < cfg.candidates + n_local; ++i) {
    Eigen::VectorXd x(dim);
    if (i < cfg.candidates) {
      for (int d = 0; d < dim; ++d) x[d] = rng.uniform();
    } else {
      for (int d = 0; d < dim; ++d)
        x[d] = std::clamp(incumbent[d] + 0.1 * rng.normal(), 0.0, 1.0);
    }
    const auto [mean, var] = scored.posterior(t, x);
    const double ucb = mean + kappa * std::sqrt(var);
    if (ucb > best_ucb) {
      best_ucb = ucb;
      best_x = x;
    }
  }
  return best_x;
}

}  // namespace ctxtune
