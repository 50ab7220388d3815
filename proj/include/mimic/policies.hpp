#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "mimic/mpc.hpp"
#include "mimic/neural.hpp"
#include "mimic/track.hpp"
#include "mimic/vehicle.hpp"

namespace mimic {

inline constexpr int kNumFeatures = 9;
inline constexpr double kFeatureSpacing = 5.0;  // m between curvature lookaheads

/// chi = (d, phi, kappa(sigma), kappa(sigma + 5), ..., kappa(sigma + 30)).
using Features = Eigen::Matrix<double, kNumFeatures, 1>;

Features extract_features(const StateVector& x, const Track& track);
Features extract_features(const VehicleState& state, const Track& track);

/// d(chi)/d(x), kNumFeatures x nx.
Eigen::MatrixXd feature_state_jacobian(const StateVector& x, const Track& track);

/// Multipliers applied to the features before they enter a network.
struct FeatureScaling {
  double d = 1.0;
  double phi = 1.0;
  double kappa = 100.0;

  Eigen::VectorXd diagonal() const;
  Eigen::VectorXd apply(const Features& chi) const { return diagonal().cwiseProduct(chi); }
};

enum class PolicyKind { NN, MPC, NN_MPC };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& name);

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything an act() call produced that training needs afterwards.
struct PolicyAux {
  StateVector state;
  Features features = Features::Zero();
  Eigen::VectorXd net_output;  // before the output head
  Mlp::Tape tape;
  MpcParams theta;             // parameters handed to the MPC, MPC kinds only
  std::optional<KktPoint> kkt;
};

struct PolicyOutput {
  double action = 0.0;
  PolicyAux aux;
};

/// Vector-Jacobian product of one action with respect to the learnable
/// parameters and the state the action was computed at.
struct PolicyGradient {
  Eigen::VectorXd params;
  StateVector state;
  bool weak = false;  // KKT point at a weakly active constraint
};

/// NN:     steering angle = delta_max * tanh(g(chi) / delta_max)
/// MPC:    u_0 of the OCP with learned theta (any variant; with a setpoint
///         variant the setpoints are constants)
/// NN_MPC: setpoints (d_ref, phi_ref) = g(chi) through scaled tanh heads, then
///         u_0 of the OCP; SetpointRate also learns a global log W_rate
///
/// Learnable parameters are stored flat as [network params; MPC params],
/// where the MPC block is theta (MPC) or log W_rate (NN_MPC, rate variant).
class Policy {
 public:
  static Policy nn(const OcpSpec& spec, std::uint64_t seed, const VehicleParams& model = {});
  static Policy mpc(const OcpSpec& spec, const MpcParams& params, const VehicleParams& model = {});
  static Policy nn_mpc(const OcpSpec& spec, std::uint64_t seed, const VehicleParams& model = {});

  PolicyKind kind() const { return kind_; }
  ControlMode mode() const;
  const OcpSpec& spec() const { return spec_; }
  const VehicleParams& model_params() const { return model_; }
  const Mlp& network() const { return net_; }
  const MpcParams& mpc_params() const { return mpc_; }
  const FeatureScaling& scaling() const { return scaling_; }
  double phi_ref_max() const { return phi_ref_max_; }
  SolverOptions& solver_options() { return solver_; }
  const SolverOptions& solver_options() const { return solver_; }

  int num_net_params() const { return kind_ == PolicyKind::MPC ? 0 : net_.num_params(); }
  int num_mpc_params() const;
  int num_params() const { return num_net_params() + num_mpc_params(); }
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
  void set_network(Mlp net);

  /// Setpoints (NN_MPC) or steering (NN) from the network for a feature vector.
  Eigen::VectorXd head(const Eigen::VectorXd& net_output) const;
  /// Elementwise derivative of head().
  Eigen::VectorXd head_slope(const Eigen::VectorXd& net_output) const;

  PolicyOutput act(const StateVector& x, const Track& track, const PolicyAux* previous = nullptr) const;
  PolicyGradient vjp(const PolicyAux& aux, const Track& track, double action_bar) const;

  void save(const std::filesystem::path& dir) const;
  static Policy load(const std::filesystem::path& dir);

 private:
  Policy() = default;

  PolicyKind kind_ = PolicyKind::NN;
  OcpSpec spec_;
  VehicleParams model_;
  Mlp net_;
  MpcParams mpc_;
  FeatureScaling scaling_;
  double phi_ref_max_ = 0.3;
  SolverOptions solver_;
};

nlohmann::json to_json(const OcpSpec& spec);
OcpSpec ocp_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MpcParams& params);
MpcParams mpc_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VehicleParams& params);
VehicleParams vehicle_params_from_json(const nlohmann::json& j);

}  // namespace mimic
