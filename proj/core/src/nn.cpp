#include "rarecp/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "rarecp/error.hpp"

namespace rarecp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double apply(Activation a, double v) { return a == Activation::tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0); }

}  // namespace

Mlp Mlp::init(std::size_t in_dim, std::size_t hidden_dim, std::size_t hidden_layers, std::size_t out_dim,
              Activation activation, std::mt19937_64& rng) {
  if (in_dim == 0 || out_dim == 0) throw UsageError("network dimensions must be positive");
  if (hidden_layers > 0 && hidden_dim == 0) throw UsageError("hidden dimension must be positive");
  Mlp mlp;
  mlp.activation = activation;
  std::size_t fan_in = in_dim;
  for (std::size_t l = 0; l <= hidden_layers; ++l) {
    const std::size_t fan_out = l == hidden_layers ? out_dim : hidden_dim;
    // Glorot uniform.
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Linear layer{grad::Tensor({fan_out, fan_in}), grad::Tensor({fan_out})};
    for (double& w : layer.weight.values()) w = dist(rng);
    mlp.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return mlp;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

grad::Tensor Mlp::forward(const grad::Tensor& inputs) const {
  const std::size_t n = inputs.rows();
  if (inputs.cols() != in_dim()) throw NumericError("network input width mismatch");
  RowMat h = Eigen::Map<const RowMat>(inputs.data().data(), static_cast<Eigen::Index>(n),
                                      static_cast<Eigen::Index>(in_dim()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const auto rows = static_cast<Eigen::Index>(layer.weight.shape()[0]);
    const auto cols = static_cast<Eigen::Index>(layer.weight.shape()[1]);
    Eigen::Map<const RowMat> w(layer.weight.data().data(), rows, cols);
    Eigen::Map<const Eigen::RowVectorXd> b(layer.bias.data().data(), rows);
    RowMat next = h * w.transpose();
    next.rowwise() += b;
    if (l + 1 < layers.size()) next = next.unaryExpr([this](double v) { return apply(activation, v); });
    h = std::move(next);
  }
  grad::Tensor out({n, out_dim()});
  Eigen::Map<RowMat>(out.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_dim())) = h;
  return out;
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  grad::Tensor in({1, input.size()}, std::vector<double>(input.begin(), input.end()));
  return forward(in).values();
}

grad::Var Mlp::forward(const grad::Var& inputs, std::span<const grad::Var> params) const {
  if (params.size() != 2 * layers.size()) throw NumericError("network parameter count mismatch");
  grad::Var h = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = grad::affine(h, params[2 * l], params[2 * l + 1]);
    if (l + 1 < layers.size()) h = grad::activate(h, activation);
  }
  return h;
}

std::vector<grad::Tensor*> Mlp::parameters() {
  std::vector<grad::Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const grad::Tensor*> Mlp::parameters() const {
  std::vector<const grad::Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw UsageError("unknown activation '" + std::string(name) + "'");
}

const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

}  // namespace rarecp
