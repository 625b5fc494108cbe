#pragma once

// Two-branch 1-D CNN embedding the fast and slow velocity channels.
// Each branch stacks four stages of conv -> batch norm -> ReLU ->
// average pool (2,2); kernel sizes grow across stages. The two branch
// outputs are concatenated channel-wise and transposed into a
// time-major token sequence.

#include <cstddef>
#include <string>
#include <vector>

#include "emmix/nn.hpp"
#include "emmix/tensor.hpp"

namespace emmix {

struct CnnStageConfig {
  std::size_t kernel;
  std::size_t channels;
};

struct CnnConfig {
  std::vector<CnnStageConfig> stages = {{3, 32}, {5, 64}, {7, 96}, {9, 128}};
  std::size_t pool_kernel = 2;
  std::size_t pool_stride = 2;
  std::size_t input_channels = 2;
  void validate() const;
  std::size_t out_channels() const { return stages.back().channels; }
  // total width shrink across the pooling stack (16 for 4 stages of /2)
  std::size_t width_divisor() const;
};

struct CnnStage {
  Conv1dLayer conv;
  BatchNorm1dLayer bn;
};

struct CnnBranch {
  CnnConfig cfg;
  std::vector<CnnStage> stages;
  static CnnBranch create(ParamInit& init, const CnnConfig& cfg);
  // x [N×2×W], W divisible by width_divisor() -> [N×C×(W/divisor)]
  Tensor forward(const Tensor& x, bool training);
  void collect(ParamList& out, const std::string& prefix) const;
  void collect_stats(StatsList& out, const std::string& prefix);
};

struct SiameseCnn {
  CnnConfig cfg;
  CnnBranch fast;
  CnnBranch slow;
  static SiameseCnn create(ParamInit& init, const CnnConfig& cfg);
  // fast/slow [N×2×W] -> time-major tokens [N×(W/divisor)×(2C)]
  Tensor forward(const Tensor& fast_x, const Tensor& slow_x, bool training);
  std::size_t model_dim() const { return 2 * cfg.out_channels(); }
  void collect(ParamList& out, const std::string& prefix) const;
  void collect_stats(StatsList& out, const std::string& prefix);
};

}  // namespace emmix
