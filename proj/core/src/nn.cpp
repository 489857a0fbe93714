#include "ctxtune/nn.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "ctxtune/errors.hpp"
#include "ctxtune/rng.hpp"
#include "ctxtune/serial.hpp"

namespace ctxtune {

namespace {

// tanh written through exp so Eigen's vectorized packet path applies;
// std::tanh on doubles falls back to scalar libm calls and dominates the
// whole training loop. Saturates exactly to +-1 for large inputs.
void apply_activation_inplace(Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Identity:
      return;
    case Activation::Tanh:
      z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
      return;
    case Activation::Relu:
      z = z.cwiseMax(0.0);
      return;
  }
}

// Multiplies the incoming gradient by the activation derivative, expressed
// through the activation output (valid for all three activations).
void scale_by_activation_grad(Eigen::MatrixXd& delta, const Eigen::MatrixXd& out, Activation a) {
  switch (a) {
    case Activation::Identity:
      return;
    case Activation::Tanh:
      delta.array() *= 1.0 - out.array().square();
      return;
    case Activation::Relu:
      delta.array() *= (out.array() > 0.0).cast<double>();
      return;
  }
}

}  // namespace

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
  }
  return "identity";
}

Mlp Mlp::create(const std::vector<int>& widths, Activation hidden, Activation output,
                std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("mlp: layer widths must be >= 1");

  Mlp net;
  net.widths_ = widths;
  net.hidden_ = hidden;
  net.output_ = output;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l], fan_out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    Eigen::VectorXd b(fan_out);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
    net.weights_.push_back(std::move(w));
    net.biases_.push_back(std::move(b));
  }
  return net;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  return forward(Eigen::MatrixXd(input)).col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_dim())
    throw std::invalid_argument("mlp forward: input has " + std::to_string(inputs.rows()) +
                                " rows, expected " + std::to_string(input_dim()));
  Eigen::MatrixXd a = inputs;
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    apply_activation_inplace(z, l + 1 == layer_count() ? output_ : hidden_);
    a = std::move(z);
  }
  return a;
}

Mlp::Trace Mlp::forward_trace(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_dim())
    throw std::invalid_argument("mlp forward_trace: input dimension mismatch");
  Trace t;
  t.activations.reserve(static_cast<std::size_t>(layer_count()) + 1);
  t.activations.push_back(inputs);
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weights_[l] * t.activations.back();
    z.colwise() += biases_[l];
    apply_activation_inplace(z, l + 1 == layer_count() ? output_ : hidden_);
    t.activations.push_back(std::move(z));
  }
  return t;
}

Mlp::BackwardResult Mlp::backward(const Trace& trace, const Eigen::MatrixXd& upstream) const {
  const int L = layer_count();
  if (static_cast<int>(trace.activations.size()) != L + 1)
    throw std::invalid_argument("mlp backward: trace does not match network depth");
  if (upstream.rows() != output_dim() || upstream.cols() != trace.activations.back().cols())
    throw std::invalid_argument("mlp backward: upstream gradient shape mismatch");

  BackwardResult result;
  result.grads.weight_grads.resize(L);
  result.grads.bias_grads.resize(L);

  Eigen::MatrixXd delta = upstream;
  scale_by_activation_grad(delta, trace.activations[L], output_);
  for (int l = L - 1; l >= 0; --l) {
    result.grads.weight_grads[l].noalias() = delta * trace.activations[l].transpose();
    result.grads.bias_grads[l] = delta.rowwise().sum();
    Eigen::MatrixXd back = weights_[l].transpose() * delta;
    if (l > 0) {
      scale_by_activation_grad(back, trace.activations[l], hidden_);
      delta = std::move(back);
    } else {
      result.input_grad = std::move(back);
    }
  }
  return result;
}

Mlp::BackwardResult Mlp::backward(const Eigen::MatrixXd& inputs,
                                  const Eigen::MatrixXd& upstream) const {
  return backward(forward_trace(inputs), upstream);
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layer_count(); ++l)
    n += static_cast<std::size_t>(weights_[l].size()) + static_cast<std::size_t>(biases_[l].size());
  return n;
}

bool Mlp::params_finite() const {
  for (int l = 0; l < layer_count(); ++l)
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
  return true;
}

std::string Mlp::serialize() const {
  nlohmann::json header;
  header["widths"] = widths_;
  header["hidden"] = to_string(hidden_);
  header["output"] = to_string(output_);
  header["params"] = param_count();
  const std::string head = header.dump();

  std::string out;
  put_u32(out, static_cast<std::uint32_t>(head.size()));
  out.append(head);
  for (int l = 0; l < layer_count(); ++l) {
    put_f64_array(out, weights_[l].data(), static_cast<std::size_t>(weights_[l].size()));
    put_f64_array(out, biases_[l].data(), static_cast<std::size_t>(biases_[l].size()));
  }
  return out;
}

Mlp Mlp::deserialize(const std::string& blob) {
  PayloadReader r(blob);
  const std::string head = r.raw(r.u32());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(std::string("mlp blob: bad shape header: ") + e.what());
  }
  Mlp net;
  net.widths_ = header.at("widths").get<std::vector<int>>();
  net.hidden_ = activation_from_string(header.at("hidden").get<std::string>());
  net.output_ = activation_from_string(header.at("output").get<std::string>());
  for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
    Eigen::MatrixXd w(net.widths_[l + 1], net.widths_[l]);
    r.f64_array(w.data(), static_cast<std::size_t>(w.size()));
    Eigen::VectorXd b(net.widths_[l + 1]);
    r.f64_array(b.data(), static_cast<std::size_t>(b.size()));
    net.weights_.push_back(std::move(w));
    net.biases_.push_back(std::move(b));
  }
  if (!r.done()) throw io_error("mlp blob: trailing bytes");
  return net;
}

GradBundle GradBundle::zeros_like(const Mlp& net) {
  GradBundle g;
  for (int l = 0; l < net.layer_count(); ++l) {
    g.weight_grads.push_back(Eigen::MatrixXd::Zero(net.weight(l).rows(), net.weight(l).cols()));
    g.bias_grads.push_back(Eigen::VectorXd::Zero(net.bias(l).size()));
  }
  return g;
}

double GradBundle::global_norm() const {
  if (cached_norm_ >= 0.0) return cached_norm_;
  double sq = 0.0;
  for (const auto& w : weight_grads) sq += w.squaredNorm();
  for (const auto& b : bias_grads) sq += b.squaredNorm();
  cached_norm_ = std::sqrt(sq);
  return cached_norm_;
}

void GradBundle::scale(double factor) {
  for (auto& w : weight_grads) w *= factor;
  for (auto& b : bias_grads) b *= factor;
  if (cached_norm_ >= 0.0) cached_norm_ *= std::abs(factor);
}

void GradBundle::accumulate(const GradBundle& other, double factor) {
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    weight_grads[l] += factor * other.weight_grads[l];
    bias_grads[l] += factor * other.bias_grads[l];
  }
  cached_norm_ = -1.0;
}

bool GradBundle::finite() const {
  for (const auto& w : weight_grads)
    if (!w.allFinite()) return false;
  for (const auto& b : bias_grads)
    if (!b.allFinite()) return false;
  return true;
}

double clip_global_norm(GradBundle& grads, double max_norm) {
  if (max_norm < 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be >= 0");
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(norm > 0.0 ? max_norm / norm : 0.0);
  return norm;
}

double clip_global_norm(const std::vector<GradBundle*>& bundles, double max_norm) {
  if (max_norm < 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be >= 0");
  double sq = 0.0;
  for (const GradBundle* g : bundles) {
    const double n = g->global_norm();
    sq += n * n;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = norm > 0.0 ? max_norm / norm : 0.0;
    for (GradBundle* g : bundles) g->scale(factor);
  }
  return norm;
}

AdamOptimizer::AdamOptimizer(const Mlp& net, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(GradBundle::zeros_like(net)),
      v_(GradBundle::zeros_like(net)) {}

void AdamOptimizer::step(Mlp& net, const GradBundle& grads, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("adam: lr must be > 0");
  if (!grads.finite()) throw numeric_error("adam: non-finite gradients");
  if (grads.weight_grads.size() != m_.weight_grads.size())
    throw std::invalid_argument("adam: gradient shape mismatch");

  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));

  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = (beta2_ * v.array() + (1.0 - beta2_) * g.array().square()).matrix();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  };
  for (std::size_t l = 0; l < m_.weight_grads.size(); ++l) {
    update(net.weight(l), m_.weight_grads[l], v_.weight_grads[l], grads.weight_grads[l]);
    update(net.bias(l), m_.bias_grads[l], v_.bias_grads[l], grads.bias_grads[l]);
  }
}

std::string AdamOptimizer::serialize() const {
  nlohmann::json header;
  header["beta1"] = beta1_;
  header["beta2"] = beta2_;
  header["eps"] = eps_;
  header["step"] = step_count_;
  std::size_t params = 0;
  for (const auto& w : m_.weight_grads) params += static_cast<std::size_t>(w.size());
  for (const auto& b : m_.bias_grads) params += static_cast<std::size_t>(b.size());
  header["params"] = params;
  const std::string head = header.dump();

  std::string out;
  put_u32(out, static_cast<std::uint32_t>(head.size()));
  out.append(head);
  auto dump_bundle = [&out](const GradBundle& g) {
    for (std::size_t l = 0; l < g.weight_grads.size(); ++l) {
      put_f64_array(out, g.weight_grads[l].data(), static_cast<std::size_t>(g.weight_grads[l].size()));
      put_f64_array(out, g.bias_grads[l].data(), static_cast<std::size_t>(g.bias_grads[l].size()));
    }
  };
  dump_bundle(m_);
  dump_bundle(v_);
  return out;
}

AdamOptimizer AdamOptimizer::deserialize(const std::string& blob, const Mlp& net) {
  PayloadReader r(blob);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.raw(r.u32()));
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(std::string("adam blob: bad header: ") + e.what());
  }
  AdamOptimizer opt(net, header.at("beta1").get<double>(), header.at("beta2").get<double>(),
                    header.at("eps").get<double>());
  opt.step_count_ = header.at("step").get<long>();
  auto load_bundle = [&r](GradBundle& g) {
    for (std::size_t l = 0; l < g.weight_grads.size(); ++l) {
      r.f64_array(g.weight_grads[l].data(), static_cast<std::size_t>(g.weight_grads[l].size()));
      r.f64_array(g.bias_grads[l].data(), static_cast<std::size_t>(g.bias_grads[l].size()));
    }
  };
  load_bundle(opt.m_);
  load_bundle(opt.v_);
  if (!r.done()) throw io_error("adam blob: trailing bytes");
  return opt;
}

}  // namespace ctxtune
