#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ctxtune {

// Whether the agent gets to see the per-instance physics values in its
// observation. Fixed for a whole training run.
enum class VisibilityMode { Hidden, Visible };

VisibilityMode visibility_from_string(const std::string& s);
std::string to_string(VisibilityMode mode);

// One physics parameter an environment exposes for per-instance variation,
// e.g. gravity or a link length. min/max bound the physically meaningful
// range; Gaussian draws outside it are rejected and redrawn.
struct ContextFeature {
  std::string name;
  double default_value = 0.0;
  double min_value = -std::numeric_limits<double>::infinity();
  double max_value = std::numeric_limits<double>::infinity();
};

// Values assigned to a subset of an environment's features, selecting one
// MDP instance. Features not assigned keep their defaults. Immutable once
// built; safe to share across training lanes.
struct Context {
  std::map<std::string, double> assignments;

  bool has(const std::string& feature) const { return assignments.count(feature) > 0; }
  double value_or(const std::string& feature, double fallback) const {
    auto it = assignments.find(feature);
    return it == assignments.end() ? fallback : it->second;
  }
};

// A seeded draw of n contexts for one feature. Regenerating with the same
// (feature, mu, sigma, n, seed) yields identical values.
struct InstanceSet {
  std::vector<Context> contexts;
  ContextFeature feature;
  double mu = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return contexts.size(); }
  // Fixed-order cycling (one context per episode).
  const Context& cycle(long episode) const { return contexts[static_cast<std::size_t>(episode) % contexts.size()]; }

  std::string to_json() const;
  static InstanceSet from_json(const std::string& text);
};

// Draws n values from Normal(mu, sigma) with a dedicated generator seeded by
// `seed`; draws outside the feature's physical range are resampled. sigma < 0
// or n < 1 is invalid.
InstanceSet sample_instance_set(const ContextFeature& feature, double mu, double sigma,
                                int n, std::uint64_t seed);

// Hidden: returns obs unchanged. Visible: appends the context's assigned
// feature values, ordered by `feature_order`. Values are appended raw unless
// `normalize` is set, in which case each is divided by |default| of its
// feature (defaults of 0 are left raw).
Eigen::VectorXd augment_observation(const Eigen::VectorXd& obs, const Context& ctx,
                                    VisibilityMode mode,
                                    const std::vector<ContextFeature>& feature_order,
                                    bool normalize = false);

}  // namespace ctxtune
