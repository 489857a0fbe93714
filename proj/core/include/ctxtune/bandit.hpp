#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace ctxtune {

// One data point for the hyperparameter bandit: at perturbation interval t,
// normalized configuration x in [0,1]^d earned reward improvement y.
struct BanditObservation {
  int t = 0;
  Eigen::VectorXd x;
  double y = 0.0;
};

// Kernel hyperparameters of the time-varying GP:
//   k((x,t), (x',t')) = signal_var * exp(-0.5 sum_d ((x_d - x'_d)/l_d)^2)
//                        * (1 - epsilon)^(|t - t'| / 2)
// plus noise_var on the diagonal.
struct GpParams {
  double signal_var = 1.0;
  double noise_var = 1e-2;
  double epsilon = 0.1;  // time decay in [0, 1)
  Eigen::VectorXd lengthscales;  // per dimension, > 0
};

double gp_kernel(const GpParams& p, const Eigen::VectorXd& x1, double t1,
                 const Eigen::VectorXd& x2, double t2);

struct GpFitDiagnostics {
  double log_marginal_likelihood = 0.0;
  bool unit_noise_fallback = false;  // all-identical y
  double jitter = 0.0;               // extra diagonal added for factorization
};

// Gaussian process over (x, t) with y standardized per fit. Posterior
// queries run in the standardized space; UCB only needs the ordering.
class GpModel {
 public:
  // Prior-only model (no observations).
  static GpModel empty(int dim);

  // Kernel hyperparameters chosen by maximizing log marginal likelihood over
  // a fixed multi-start grid with per-dimension lengthscale refinement.
  static GpModel fit(const std::vector<BanditObservation>& obs, int dim);

  // Fixed kernel hyperparameters; `standardize` off feeds y through raw
  // (used by oracle tests and pending-point hallucination).
  static GpModel fit_with_params(const std::vector<BanditObservation>& obs, int dim,
                                 const GpParams& params, bool standardize = true);

  // Predictive mean and variance (variance clamped at 0 against round-off).
  std::pair<double, double> posterior(int t, const Eigen::VectorXd& x) const;

  double log_marginal_likelihood() const { return diag_.log_marginal_likelihood; }
  const GpFitDiagnostics& diagnostics() const { return diag_; }
  const GpParams& params() const { return params_; }
  int dim() const { return dim_; }
  int size() const { return static_cast<int>(y_.size()); }
  const Eigen::MatrixXd& inputs() const { return x_; }        // dim x n
  const Eigen::VectorXd& targets() const { return y_; }       // standardized
  const Eigen::VectorXd& times() const { return t_; }

  // Copy of this model with `pending` points hallucinated at their posterior
  // means ("believer" batch strategy). Kernel hyperparameters are kept.
  GpModel with_pending(const std::vector<std::pair<int, Eigen::VectorXd>>& pending) const;

 private:
  void factorize();  // throws numeric_error when jitter up to 1e-4 is not enough

  int dim_ = 0;
  GpParams params_;
  GpFitDiagnostics diag_;
  Eigen::MatrixXd x_;  // dim x n
  Eigen::VectorXd t_;
  Eigen::VectorXd y_;  // standardized targets
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;  // K^-1 y
};

struct AcquisitionConfig {
  double kappa = 2.0;
  // kappa_t = sqrt(2 log(d t^2 pi^2 / 0.6)) instead of the constant.
  bool kappa_schedule = false;
  int candidates = 512;
};

double ucb_kappa(const AcquisitionConfig& cfg, int t, int dim);

// Maximizes UCB(x) = mean + kappa sqrt(var) over a seeded candidate set
// (uniform points plus local perturbations of the incumbent). Pending
// selections are hallucinated at the posterior mean before scoring. An
// empty model yields a uniform random point.
Eigen::VectorXd suggest(const GpModel& model, int t, int dim,
                        const std::vector<Eigen::VectorXd>& pending,
                        const AcquisitionConfig& cfg, std::uint64_t seed);

}  // namespace ctxtune
