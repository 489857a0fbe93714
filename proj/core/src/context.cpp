#include "ctxtune/context.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"

namespace ctxtune {

VisibilityMode visibility_from_string(const std::string& s) {
  if (s == "hidden") return VisibilityMode::Hidden;
  if (s == "visible") return VisibilityMode::Visible;
  throw invalid_config("visibility must be 'hidden' or 'visible', got '" + s + "'");
}

std::string to_string(VisibilityMode mode) {
  return mode == VisibilityMode::Hidden ? "hidden" : "visible";
}

InstanceSet sample_instance_set(const ContextFeature& feature, double mu, double sigma,
                                int n, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("sample_instance_set: sigma must be >= 0");
  if (n < 1) throw std::invalid_argument("sample_instance_set: n must be >= 1");
  if (!std::isfinite(mu) || !std::isfinite(sigma))
    throw std::invalid_argument("sample_instance_set: mu and sigma must be finite");

  InstanceSet set;
  set.feature = feature;
  set.mu = mu;
  set.sigma = sigma;
  set.seed = seed;
  set.contexts.reserve(static_cast<std::size_t>(n));

  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    double v = 0.0;
    int attempts = 0;
    // Rejection keeps the distribution shape near the bound; with the
    // default (mu, sigma) pairs a rejection is vanishingly rare.
    do {
      if (++attempts > 100000)
        throw numeric_error("sample_instance_set: could not draw a value inside (" +
                            std::to_string(feature.min_value) + ", " +
                            std::to_string(feature.max_value) + ") for '" + feature.name + "'");
      v = sigma == 0.0 ? mu : rng.normal(mu, sigma);
    } while (!(v > feature.min_value && v < feature.max_value));
    Context ctx;
    ctx.assignments[feature.name] = v;
    set.contexts.push_back(std::move(ctx));
  }
  return set;
}

Eigen::VectorXd augment_observation(const Eigen::VectorXd& obs, const Context& ctx,
                                    VisibilityMode mode,
                                    const std::vector<ContextFeature>& feature_order,
                                    bool normalize) {
  if (mode == VisibilityMode::Hidden) return obs;

  std::vector<double> extra;
  extra.reserve(ctx.assignments.size());
  for (const ContextFeature& f : feature_order) {
    auto it = ctx.assignments.find(f.name);
    if (it == ctx.assignments.end()) continue;
    double v = it->second;
    if (normalize && f.default_value != 0.0) v /= std::abs(f.default_value);
    extra.push_back(v);
  }

  Eigen::VectorXd out(obs.size() + static_cast<Eigen::Index>(extra.size()));
  out.head(obs.size()) = obs;
  for (std::size_t i = 0; i < extra.size(); ++i) out[obs.size() + static_cast<Eigen::Index>(i)] = extra[i];
  return out;
}

std::string InstanceSet::to_json() const {
  nlohmann::json j;
  j["feature"] = feature.name;
  j["mu"] = mu;
  j["sigma"] = sigma;
  j["seed"] = seed;
  std::vector<double> values;
  values.reserve(contexts.size());
  for (const Context& c : contexts) values.push_back(c.assignments.at(feature.name));
  j["values"] = values;
  return j.dump(2);
}

InstanceSet InstanceSet::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(std::string("instance set: ") + e.what());
  }
  InstanceSet set;
  set.feature.name = j.at("feature").get<std::string>();
  set.mu = j.at("mu").get<double>();
  set.sigma = j.at("sigma").get<double>();
  set.seed = j.at("seed").get<std::uint64_t>();
  for (double v : j.at("values").get<std::vector<double>>()) {
    Context ctx;
    ctx.assignments[set.feature.name] = v;
    set.contexts.push_back(std::move(ctx));
  }
  if (set.contexts.empty()) throw io_error("instance set: empty values array");
  return set;
}

}  // namespace ctxtune
