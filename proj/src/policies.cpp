#include "mimic/policies.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mimic/io.hpp"
#include "mimic/model.hpp"
#include "mimic/sensitivity.hpp"

namespace mimic {

namespace {

const std::vector<int> kHiddenSizes = {64, 32, 16};

std::vector<int> layer_sizes(int out) {
  std::vector<int> sizes = {kNumFeatures};
  sizes.insert(sizes.end(), kHiddenSizes.begin(), kHiddenSizes.end());
  sizes.push_back(out);
  return sizes;
}

// y -> a * tanh(y / a) and its slope.
double scaled_tanh(double y, double a) { return a * std::tanh(y / a); }
double scaled_tanh_slope(double y, double a) {
  const double t = std::tanh(y / a);
  return 1.0 - t * t;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace

Features extract_features(const StateVector& x, const Track& track) {
  Features chi;
  chi(0) = x(sx::d);
  chi(1) = x(sx::phi);
  for (int i = 0; i < kNumFeatures - 2; ++i) chi(2 + i) = track.curvature(x(sx::sigma) + kFeatureSpacing * i);
  return chi;
}

Features extract_features(const VehicleState& state, const Track& track) {
  return extract_features(state.to_vector(), track);
}

Eigen::MatrixXd feature_state_jacobian(const StateVector& x, const Track& track) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(kNumFeatures, x.size());
  J(0, sx::d) = 1.0;
  J(1, sx::phi) = 1.0;
  for (int i = 0; i < kNumFeatures - 2; ++i) {
    J(2 + i, sx::sigma) = track.curvature_slope(x(sx::sigma) + kFeatureSpacing * i);
  }
  return J;
}

Eigen::VectorXd FeatureScaling::diagonal() const {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(kNumFeatures, kappa);
  s(0) = d;
  s(1) = phi;
  return s;
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::NN:
      return "nn";
    case PolicyKind::MPC:
      return "mpc";
    case PolicyKind::NN_MPC:
      return "nn_mpc";
  }
  return "?";
}

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "nn") return PolicyKind::NN;
  if (name == "mpc") return PolicyKind::MPC;
  if (name == "nn_mpc") return PolicyKind::NN_MPC;
  throw InvalidArgument(fmt::format("unknown policy kind '{}' (expected nn, mpc or nn_mpc)", name));
}

Policy Policy::nn(const OcpSpec& spec, std::uint64_t seed, const VehicleParams& model) {
  spec.validate();
  Policy p;
  p.kind_ = PolicyKind::NN;
  p.spec_ = spec;
  p.model_ = model;
  p.net_ = Mlp::he_uniform(layer_sizes(1), seed);
  return p;
}

Policy Policy::mpc(const OcpSpec& spec, const MpcParams& params, const VehicleParams& model) {
  spec.validate();
  params.validate();
  if (params.variant != spec.variant) throw InvalidArgument("mpc policy: params and ocp spec disagree on the variant");
  Policy p;
  p.kind_ = PolicyKind::MPC;
  p.spec_ = spec;
  p.model_ = model;
  p.mpc_ = params;
  return p;
}

Policy Policy::nn_mpc(const OcpSpec& spec, std::uint64_t seed, const VehicleParams& model) {
  spec.validate();
  if (spec.variant == Variant::Weights) throw InvalidArgument("nn_mpc policy: requires a setpoint variant");
  Policy p;
  p.kind_ = PolicyKind::NN_MPC;
  p.spec_ = spec;
  p.model_ = model;
  p.net_ = Mlp::he_uniform(layer_sizes(2), seed);
  p.mpc_ = MpcParams::zeros(spec.variant);
  return p;
}

ControlMode Policy::mode() const {
  return kind_ == PolicyKind::NN ? ControlMode::SteeringAngle : control_mode(spec_.variant);
}

int Policy::num_mpc_params() const {
  switch (kind_) {
    case PolicyKind::NN:
      return 0;
    case PolicyKind::MPC:
      return param_dim(spec_.variant);
    case PolicyKind::NN_MPC:
      return spec_.variant == Variant::SetpointRate ? 1 : 0;
  }
  return 0;
}

Eigen::VectorXd Policy::params() const {
  Eigen::VectorXd p(num_params());
  if (num_net_params()) p.head(num_net_params()) = net_.params();
  if (kind_ == PolicyKind::MPC) p.tail(num_mpc_params()) = mpc_.theta;
  if (num_mpc_params() && kind_ == PolicyKind::NN_MPC) p(num_params() - 1) = mpc_.theta(2);
  return p;
}

void Policy::set_params(const Eigen::VectorXd& p) {
  if (p.size() != num_params()) {
    throw InvalidArgument(fmt::format("policy: expected {} parameters, got {}", num_params(), p.size()));
  }
  if (num_net_params()) net_.set_params(p.head(num_net_params()));
  if (kind_ == PolicyKind::MPC) mpc_.theta = p.tail(num_mpc_params());
  if (kind_ == PolicyKind::NN_MPC && num_mpc_params()) mpc_.theta(2) = p(num_params() - 1);
}

void Policy::set_network(Mlp net) {
  if (kind_ == PolicyKind::MPC) throw InvalidArgument("policy: the mpc kind has no network");
  if (net.sizes() != net_.sizes()) throw InvalidArgument("policy: network shape mismatch");
  net_ = std::move(net);
}

Eigen::VectorXd Policy::head(const Eigen::VectorXd& y) const {
  if (kind_ == PolicyKind::NN) return Eigen::VectorXd::Constant(1, scaled_tanh(y(0), spec_.limits.delta_max));
  return Eigen::Vector2d(scaled_tanh(y(0), spec_.half_width), scaled_tanh(y(1), phi_ref_max_));
}

Eigen::VectorXd Policy::head_slope(const Eigen::VectorXd& y) const {
  if (kind_ == PolicyKind::NN) return Eigen::VectorXd::Constant(1, scaled_tanh_slope(y(0), spec_.limits.delta_max));
  return Eigen::Vector2d(scaled_tanh_slope(y(0), spec_.half_width), scaled_tanh_slope(y(1), phi_ref_max_));
}

PolicyOutput Policy::act(const StateVector& x, const Track& track, const PolicyAux* previous) const {
  if (x.size() != state_dim(mode())) {
    throw InvalidArgument(fmt::format("policy {}: state has {} entries, expected {}", to_string(kind_), x.size(),
                                      state_dim(mode())));
  }
  PolicyOutput out;
  PolicyAux& aux = out.aux;
  aux.state = x;
  aux.features = extract_features(x, track);
  if (kind_ != PolicyKind::MPC) aux.net_output = net_.forward(scaling_.apply(aux.features), aux.tape);
  if (kind_ == PolicyKind::NN) {
    out.action = head(aux.net_output)(0);
    return out;
  }
  aux.theta = mpc_;
  if (kind_ == PolicyKind::NN_MPC) aux.theta.theta.head(2) = head(aux.net_output);

  const FrenetModel model(track, model_, mode(), spec_.dt);
  try {
    if (previous && previous->kkt && previous->kkt->x.front().size() == x.size()) {
      const KktPoint warm = shift_warm_start(*previous->kkt, model, x);
      aux.kkt = solve(model, spec_, aux.theta, x, &warm, solver_);
    } else {
      aux.kkt = solve(model, spec_, aux.theta, x, nullptr, solver_);
    }
  } catch (const std::exception& e) {
    throw PolicyError(fmt::format("policy {} at sigma={:.3f} d={:.3f}: {}", to_string(kind_), x(sx::sigma),
                                  x(sx::d), e.what()));
  }
  out.action = aux.kkt->u0();
  return out;
}

PolicyGradient Policy::vjp(const PolicyAux& aux, const Track& track, double action_bar) const {
  PolicyGradient g;
  g.params = Eigen::VectorXd::Zero(num_params());
  g.state = StateVector::Zero(aux.state.size());
  if (action_bar == 0.0) return g;

  // Cotangent on the network output, if any.
  Eigen::VectorXd y_bar;
  if (kind_ == PolicyKind::NN) {
    y_bar = Eigen::VectorXd::Constant(1, action_bar * scaled_tanh_slope(aux.net_output(0), spec_.limits.delta_max));
  } else {
    const FrenetModel model(track, model_, mode(), spec_.dt);
    const KktPoint& kkt = *aux.kkt;
    AdjointResult adj;
    try {
      const Ocp ocp(model, spec_, aux.theta, kkt.soft, solver_.slack_l1, solver_.slack_l2);
      SensitivityOptions opts;
      opts.active_tol = solver_.active_tol;
      const Sensitivity sens(kkt_system(ocp, kkt, aux.state, opts), opts);
      g.weak = sens.weak();
      adj = sens.adjoint(u0_seed(ocp, action_bar));
    } catch (const std::exception& e) {
      throw PolicyError(fmt::format("policy {} gradient at sigma={:.3f}: {}", to_string(kind_),
                                    aux.state(sx::sigma), e.what()));
    }
    g.state = adj.x0;
    if (kind_ == PolicyKind::MPC) {
      g.params = adj.theta;
      return g;
    }
    y_bar.resize(2);
    y_bar(0) = adj.theta(0) * scaled_tanh_slope(aux.net_output(0), spec_.half_width);
    y_bar(1) = adj.theta(1) * scaled_tanh_slope(aux.net_output(1), phi_ref_max_);
    if (num_mpc_params()) g.params(num_params() - 1) = adj.theta(2);
  }

  Eigen::VectorXd net_grad = Eigen::VectorXd::Zero(net_.num_params());
  Eigen::VectorXd input_grad;
  net_.backward(aux.tape, y_bar, net_grad, &input_grad);
  g.params.head(net_.num_params()) = net_grad;
  const Eigen::VectorXd chi_bar = scaling_.diagonal().cwiseProduct(input_grad);
  g.state += feature_state_jacobian(aux.state, track).transpose() * chi_bar;
  return g;
}

nlohmann::json to_json(const OcpSpec& spec) {
  return {{"horizon", spec.horizon},
          {"dt", spec.dt},
          {"lookahead", spec.lookahead},
          {"variant", to_string(spec.variant)},
          {"half_width", spec.half_width},
          {"delta_max", spec.limits.delta_max},
          {"delta_rate_max", spec.limits.delta_rate_max},
          {"beta_max", spec.limits.beta_max},
          {"psi_dot_max", spec.limits.psi_dot_max}};
}

OcpSpec ocp_spec_from_json(const nlohmann::json& j) {
  OcpSpec s;
  try {
    s.horizon = j.at("horizon").get<int>();
    s.dt = j.at("dt").get<double>();
    s.lookahead = j.at("lookahead").get<double>();
    s.variant = parse_variant(j.at("variant").get<std::string>());
    s.half_width = j.at("half_width").get<double>();
    s.limits.delta_max = j.at("delta_max").get<double>();
    s.limits.delta_rate_max = j.at("delta_rate_max").get<double>();
    s.limits.beta_max = j.at("beta_max").get<double>();
    s.limits.psi_dot_max = j.at("psi_dot_max").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("ocp spec: {}", e.what()));
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const MpcParams& params) {
  return {{"variant", to_string(params.variant)},
          {"theta", std::vector<double>(params.theta.data(), params.theta.data() + params.theta.size())}};
}

MpcParams mpc_params_from_json(const nlohmann::json& j) {
  MpcParams p;
  try {
    p.variant = parse_variant(j.at("variant").get<std::string>());
    const auto theta = j.at("theta").get<std::vector<double>>();
    p.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("mpc params: {}", e.what()));
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const VehicleParams& v) {
  return {{"mass", v.mass}, {"yaw_inertia", v.yaw_inertia}, {"lf", v.lf}, {"lr", v.lr}, {"cf", v.cf},
          {"cr", v.cr},     {"vx", v.vx},                   {"steering_ratio", v.steering_ratio}};
}

VehicleParams vehicle_params_from_json(const nlohmann::json& j) {
  VehicleParams v;
  try {
    v.mass = j.at("mass").get<double>();
    v.yaw_inertia = j.at("yaw_inertia").get<double>();
    v.lf = j.at("lf").get<double>();
    v.lr = j.at("lr").get<double>();
    v.cf = j.at("cf").get<double>();
    v.cr = j.at("cr").get<double>();
    v.vx = j.at("vx").get<double>();
    v.steering_ratio = j.at("steering_ratio").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("vehicle params: {}", e.what()));
  }
  v.validate();
  return v;
}

void Policy::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json policy = {{"kind", to_string(kind_)}, {"vehicle", to_json(model_)}};
  write_text_file(dir / "policy.json", policy.dump(2) + "\n");
  write_text_file(dir / "ocp_spec.json", to_json(spec_).dump(2) + "\n");
  if (kind_ != PolicyKind::NN) write_text_file(dir / "mpc_params.json", to_json(mpc_).dump(2) + "\n");
  if (kind_ != PolicyKind::MPC) {
    nlohmann::json net = net_.to_json();
    net["feature_scaling"] = {{"d", scaling_.d}, {"phi", scaling_.phi}, {"kappa", scaling_.kappa}};
    net["variant"] = kind_ == PolicyKind::NN ? "steering" : to_string(spec_.variant);
    net["phi_ref_max"] = phi_ref_max_;
    write_text_file(dir / "network.json", net.dump() + "\n");
  }
}

Policy Policy::load(const std::filesystem::path& dir) {
  const nlohmann::json policy = read_json(dir / "policy.json");
  Policy p;
  try {
    p.kind_ = parse_policy_kind(policy.at("kind").get<std::string>());
    p.model_ = vehicle_params_from_json(policy.at("vehicle"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("{}: {}", (dir / "policy.json").string(), e.what()));
  }
  p.spec_ = ocp_spec_from_json(read_json(dir / "ocp_spec.json"));
  if (p.kind_ != PolicyKind::NN) p.mpc_ = mpc_params_from_json(read_json(dir / "mpc_params.json"));
  if (p.kind_ != PolicyKind::MPC) {
    const nlohmann::json net = read_json(dir / "network.json");
    p.net_ = Mlp::from_json(net);
    try {
      const auto& fs = net.at("feature_scaling");
      p.scaling_ = {fs.at("d").get<double>(), fs.at("phi").get<double>(), fs.at("kappa").get<double>()};
      p.phi_ref_max_ = net.at("phi_ref_max").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(fmt::format("{}: {}", (dir / "network.json").string(), e.what()));
    }
    if (p.net_.sizes() != layer_sizes(p.kind_ == PolicyKind::NN ? 1 : 2)) {
      throw InvalidArgument("policy checkpoint: network shape does not match the policy kind");
    }
  }
  if (p.kind_ != PolicyKind::NN && p.mpc_.variant != p.spec_.variant) {
    throw InvalidArgument("policy checkpoint: mpc params and ocp spec disagree on the variant");
  }
  return p;
}

}  // namespace mimic
