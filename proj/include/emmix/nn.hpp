#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "emmix/ops.hpp"
#include "emmix/tensor.hpp"

namespace emmix {

// Named parameters, in construction order. Shared by the optimizer,
// checkpoints and the gradient checker.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Named batch-norm running statistics (not trainable, checkpointed).
using StatsList = std::vector<std::pair<std::string, BnStats*>>;

// Deterministic parameter initializer: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}
  Tensor uniform(Shape shape, std::size_t fan_in);

 private:
  std::mt19937_64 rng_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when bias-free
  static Linear create(ParamInit& init, std::size_t in, std::size_t out,
                       bool with_bias = true);
  // x[..., in] -> [..., out]; leading axes are folded into rows.
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNormLayer {
  Tensor gain;
  Tensor bias;
  static LayerNormLayer create(std::size_t d);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv1dLayer {
  Tensor weight;  // [out_ch, in_ch, kernel]
  Tensor bias;    // [out_ch]
  static Conv1dLayer create(ParamInit& init, std::size_t in_ch,
                            std::size_t out_ch, std::size_t kernel);
  Tensor forward(const Tensor& x) const {
    return conv1d_same(x, weight, bias);
  }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct BatchNorm1dLayer {
  Tensor gamma;
  Tensor beta;
  BnStats running;
  static BatchNorm1dLayer create(std::size_t channels);
  Tensor forward(const Tensor& x, bool training) {
    return batch_norm1d(x, gamma, beta, running, training);
  }
  void collect(ParamList& out, const std::string& prefix) const;
  void collect_stats(StatsList& out, const std::string& prefix);
};

// Adam with bias correction; state arrays are index-aligned with the
// parameter list.
class Adam {
 public:
  Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void zero_grad();
  void step();
  std::size_t param_count() const;

 private:
  ParamList params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace emmix
