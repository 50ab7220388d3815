#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace mimic {

/// Fully connected network with ReLU hidden layers and an identity output.
///
/// Parameters are stored flat, layer by layer: the row-major weight matrix
/// (n_out x n_in) followed by the bias vector.
class Mlp {
 public:
  /// Activations recorded by a forward pass, consumed by backward().
  struct Tape {
    std::vector<Eigen::VectorXd> inputs;  // input to each layer
    std::vector<Eigen::VectorXd> pre;     // pre-activation of each layer
    std::uint64_t version = 0;
  };

  Mlp() = default;
  /// All parameters zero.
  explicit Mlp(std::vector<int> sizes);
  /// He-uniform weights, zero biases, output layer scaled by `output_scale`.
  static Mlp he_uniform(std::vector<int> sizes, std::uint64_t seed, double output_scale = 0.01);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int num_params() const { return static_cast<int>(params_.size()); }

  const Eigen::VectorXd& params() const { return params_; }
  void set_params(const Eigen::VectorXd& p);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x, Tape& tape) const;

  /// Adds d(out_bar' y)/d(params) to `param_grad` and, if requested, writes
  /// the input cotangent.
  void backward(const Tape& tape, const Eigen::VectorXd& out_bar, Eigen::VectorXd& param_grad,
                Eigen::VectorXd* input_grad = nullptr) const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::size_t weight_offset(int layer) const { return offsets_[layer]; }
  std::size_t bias_offset(int layer) const {
    return offsets_[layer] + static_cast<std::size_t>(sizes_[layer + 1]) * sizes_[layer];
  }

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
  std::uint64_t version_ = 1;
};

/// Adam with bias correction (Kingma & Ba), flat parameter vectors.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step_count = 0;

  explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

  nlohmann::json to_json() const;
  static Adam from_json(const nlohmann::json& j);
};

}  // namespace mimic
