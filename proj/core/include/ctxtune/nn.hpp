#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ctxtune {

enum class Activation { Identity, Tanh, Relu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

class Mlp;

// Per-parameter gradients mirroring an Mlp's shapes, with a cached global
// L2 norm.
struct GradBundle {
  std::vector<Eigen::MatrixXd> weight_grads;
  std::vector<Eigen::VectorXd> bias_grads;

  static GradBundle zeros_like(const Mlp& net);
  double global_norm() const;  // cached after first computation
  void scale(double factor);
  void accumulate(const GradBundle& other, double factor = 1.0);
  bool finite() const;

 private:
  mutable double cached_norm_ = -1.0;
};

// Dense feed-forward network, double precision throughout. Batched calls
// treat each column as one sample. forward/backward are pure given the
// parameters; initialization is scaled-uniform with bound 1/sqrt(fan_in).
class Mlp {
 public:
  Mlp() = default;
  // widths = [input, hidden..., output]
  static Mlp create(const std::vector<int>& widths, Activation hidden, Activation output,
                    std::uint64_t seed);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  int layer_count() const { return static_cast<int>(weights_.size()); }

  Eigen::MatrixXd& weight(int layer) { return weights_[layer]; }
  const Eigen::MatrixXd& weight(int layer) const { return weights_[layer]; }
  Eigen::VectorXd& bias(int layer) { return biases_[layer]; }
  const Eigen::VectorXd& bias(int layer) const { return biases_[layer]; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;

  // Per-layer activations kept around for the backward pass.
  struct Trace {
    std::vector<Eigen::MatrixXd> activations;  // [input, a1, ..., output]
  };
  Trace forward_trace(const Eigen::MatrixXd& inputs) const;

  struct BackwardResult {
    GradBundle grads;
    Eigen::MatrixXd input_grad;  // dL/dinput, same shape as the input batch
  };
  // upstream = dL/doutput per column. Exact reverse-mode gradients; weight
  // gradients are summed over the batch (fold any 1/B into upstream).
  BackwardResult backward(const Trace& trace, const Eigen::MatrixXd& upstream) const;
  BackwardResult backward(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& upstream) const;

  std::size_t param_count() const;
  bool params_finite() const;

  // Flat binary blob with a JSON shape header; byte-stable for identical
  // parameters.
  std::string serialize() const;
  static Mlp deserialize(const std::string& blob);

 private:
  std::vector<int> widths_;
  std::vector<Eigen::MatrixXd> weights_;  // weight(l): widths[l+1] x widths[l]
  std::vector<Eigen::VectorXd> biases_;
  Activation hidden_ = Activation::Tanh;
  Activation output_ = Activation::Identity;
};

// Scales every gradient by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm. The joint overload clips across
// several bundles as one parameter vector.
double clip_global_norm(GradBundle& grads, double max_norm);
double clip_global_norm(const std::vector<GradBundle*>& bundles, double max_norm);

// Bias-corrected adaptive-moment optimizer. The learning rate is passed per
// step so it can change mid-training without touching the moments.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(const Mlp& net, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);

  void step(Mlp& net, const GradBundle& grads, double lr);  // throws numeric_error on non-finite grads

  long step_count() const { return step_count_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double epsilon() const { return eps_; }

  std::string serialize() const;
  static AdamOptimizer deserialize(const std::string& blob, const Mlp& net);

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long step_count_ = 0;
  GradBundle m_, v_;
};

}  // namespace ctxtune
