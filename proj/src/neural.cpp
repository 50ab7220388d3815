#include "mimic/neural.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "mimic/errors.hpp"

namespace mimic {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw InvalidArgument("mlp: need at least an input and an output size");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw InvalidArgument("mlp: layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l] + 1) * sizes_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
}

Mlp Mlp::he_uniform(std::vector<int> sizes, std::uint64_t seed, double output_scale) {
  Mlp net(std::move(sizes));
  std::mt19937_64 rng(seed);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / net.sizes_[l]);
    std::uniform_real_distribution<double> dist(-limit, limit);
    const double scale = l + 1 == net.num_layers() ? output_scale : 1.0;
    const auto n = static_cast<std::size_t>(net.sizes_[l]) * net.sizes_[l + 1];
    for (std::size_t i = 0; i < n; ++i) net.params_(static_cast<Eigen::Index>(net.weight_offset(l) + i)) = scale * dist(rng);
  }
  return net;
}

void Mlp::set_params(const Eigen::VectorXd& p) {
  if (p.size() != params_.size()) {
    throw InvalidArgument(fmt::format("mlp: expected {} parameters, got {}", params_.size(), p.size()));
  }
  params_ = p;
  ++version_;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  Tape tape;
  return forward(x, tape);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Tape& tape) const {
  if (x.size() != input_dim()) {
    throw InvalidArgument(fmt::format("mlp: expected {} inputs, got {}", input_dim(), x.size()));
  }
  tape.inputs.clear();
  tape.pre.clear();
  tape.version = version_;
  Eigen::VectorXd a = x;
  for (int l = 0; l < num_layers(); ++l) {
    const int nin = sizes_[l];
    const int nout = sizes_[l + 1];
    const Eigen::Map<const RowMajor> W(params_.data() + weight_offset(l), nout, nin);
    const Eigen::Map<const Eigen::VectorXd> b(params_.data() + bias_offset(l), nout);
    tape.inputs.push_back(a);
    Eigen::VectorXd z = W * a + b;
    tape.pre.push_back(z);
    a = l + 1 == num_layers() ? z : Eigen::VectorXd(z.cwiseMax(0.0));
  }
  return a;
}

void Mlp::backward(const Tape& tape, const Eigen::VectorXd& out_bar, Eigen::VectorXd& param_grad,
                   Eigen::VectorXd* input_grad) const {
  if (tape.version != version_ || static_cast<int>(tape.pre.size()) != num_layers()) {
    throw InvalidArgument("mlp: backward called with a stale or foreign tape");
  }
  if (out_bar.size() != output_dim()) throw InvalidArgument("mlp: output cotangent has the wrong size");
  if (param_grad.size() != params_.size()) param_grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::VectorXd g = out_bar;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const int nin = sizes_[l];
    const int nout = sizes_[l + 1];
    if (l + 1 < num_layers()) {
      // ReLU'(z) = 1 for z > 0, 0 otherwise (including the kink).
      for (int i = 0; i < nout; ++i) {
        if (!(tape.pre[l](i) > 0.0)) g(i) = 0.0;
      }
    }
    Eigen::Map<RowMajor> gW(param_grad.data() + weight_offset(l), nout, nin);
    Eigen::Map<Eigen::VectorXd> gb(param_grad.data() + bias_offset(l), nout);
    gW.noalias() += g * tape.inputs[l].transpose();
    gb += g;
    if (l > 0 || input_grad) {
      const Eigen::Map<const RowMajor> W(params_.data() + weight_offset(l), nout, nin);
      g = W.transpose() * g;
    }
  }
  if (input_grad) *input_grad = g;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["sizes"] = sizes_;
  j["params"] = to_std(params_);
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  if (!j.contains("sizes") || !j.contains("params")) throw InvalidArgument("mlp checkpoint: missing sizes or params");
  Mlp net(j.at("sizes").get<std::vector<int>>());
  net.set_params(from_std(j.at("params").get<std::vector<double>>()));
  return net;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != params.size()) throw InvalidArgument("adam: gradient and parameter sizes differ");
  if (m.size() != params.size()) {
    m = Eigen::VectorXd::Zero(params.size());
    v = Eigen::VectorXd::Zero(params.size());
  }
  ++step_count;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    params(i) -= lr * (m(i) / c1) / (std::sqrt(v(i) / c2) + eps);
  }
}

nlohmann::json Adam::to_json() const {
  return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps},
          {"m", to_std(m)}, {"v", to_std(v)}, {"step", step_count}};
}

Adam Adam::from_json(const nlohmann::json& j) {
  Adam a(j.at("lr").get<double>());
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
  a.m = from_std(j.at("m").get<std::vector<double>>());
  a.v = from_std(j.at("v").get<std::vector<double>>());
  a.step_count = j.at("step").get<long>();
  return a;
}

}  // namespace mimic
