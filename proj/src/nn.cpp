#include "emmix/nn.hpp"

#include <cmath>

#include "emmix/errors.hpp"

namespace emmix {

Tensor ParamInit::uniform(Shape shape, std::size_t fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng_);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Linear Linear::create(ParamInit& init, std::size_t in, std::size_t out,
                      bool with_bias) {
  Linear l;
  l.weight = init.uniform({in, out}, in);
  if (with_bias) l.bias = init.uniform({out}, in);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  std::size_t in = weight.dim(0), out = weight.dim(1);
  if (x.shape().back() != in)
    throw ShapeError("Linear: input width " +
                     std::to_string(x.shape().back()) + " != " +
                     std::to_string(in));
  bool fold = x.ndim() != 2;
  Tensor x2 = fold ? reshape(x, {x.numel() / in, in}) : x;
  Tensor y = matmul(x2, weight);
  if (bias.defined()) y = add_broadcast(y, bias);
  if (fold) {
    Shape os = x.shape();
    os.back() = out;
    y = reshape(y, os);
  }
  return y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

LayerNormLayer LayerNormLayer::create(std::size_t d) {
  LayerNormLayer l;
  l.gain = Tensor::full({d}, 1.0, true);
  l.bias = Tensor::zeros({d}, true);
  return l;
}

void LayerNormLayer::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

Conv1dLayer Conv1dLayer::create(ParamInit& init, std::size_t in_ch,
                                std::size_t out_ch, std::size_t kernel) {
  Conv1dLayer l;
  l.weight = init.uniform({out_ch, in_ch, kernel}, in_ch * kernel);
  l.bias = init.uniform({out_ch}, in_ch * kernel);
  return l;
}

void Conv1dLayer::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

BatchNorm1dLayer BatchNorm1dLayer::create(std::size_t channels) {
  BatchNorm1dLayer l;
  l.gamma = Tensor::full({channels}, 1.0, true);
  l.beta = Tensor::zeros({channels}, true);
  l.running.mean.assign(channels, 0.0);
  l.running.var.assign(channels, 1.0);
  return l;
}

void BatchNorm1dLayer::collect(ParamList& out,
                               const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

void BatchNorm1dLayer::collect_stats(StatsList& out,
                                     const std::string& prefix) {
  out.emplace_back(prefix + ".running", &running);
}

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& [name, p] : params_) {
    (void)name;
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    (void)name;
    p.zero_grad();
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const auto& g = p.grad();
    auto& vals = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      vals[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::size_t Adam::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) {
    (void)name;
    n += p.numel();
  }
  return n;
}

}  // namespace emmix
