#include "emmix/siamese_cnn.hpp"

#include "emmix/errors.hpp"
#include "emmix/ops.hpp"

namespace emmix {

void CnnConfig::validate() const {
  if (stages.size() != 4)
    throw ConfigError("cnn config: expected 4 stages, got " +
                      std::to_string(stages.size()));
  for (std::size_t i = 1; i < stages.size(); ++i)
    if (stages[i].kernel <= stages[i - 1].kernel)
      throw ConfigError("cnn config: kernel sizes must strictly increase");
  for (const auto& s : stages)
    if (s.kernel % 2 == 0)
      throw ConfigError("cnn config: kernels must be odd for same padding");
  if (input_channels < 1) throw ConfigError("cnn config: no input channels");
}

std::size_t CnnConfig::width_divisor() const {
  std::size_t d = 1;
  for (std::size_t i = 0; i < stages.size(); ++i) d *= pool_stride;
  return d;
}

CnnBranch CnnBranch::create(ParamInit& init, const CnnConfig& cfg) {
  cfg.validate();
  CnnBranch b;
  b.cfg = cfg;
  std::size_t in_ch = cfg.input_channels;
  for (const auto& sc : cfg.stages) {
    CnnStage stage;
    stage.conv = Conv1dLayer::create(init, in_ch, sc.channels, sc.kernel);
    stage.bn = BatchNorm1dLayer::create(sc.channels);
    b.stages.push_back(std::move(stage));
    in_ch = sc.channels;
  }
  return b;
}

Tensor CnnBranch::forward(const Tensor& x, bool training) {
  if (x.ndim() != 3 || x.dim(1) != cfg.input_channels)
    throw ShapeError("cnn branch: expected [N," +
                     std::to_string(cfg.input_channels) + ",W], got " +
                     shape_str(x.shape()));
  std::size_t div = cfg.width_divisor();
  if (x.dim(2) % div != 0)
    throw ConfigError("cnn branch: input width " + std::to_string(x.dim(2)) +
                      " not divisible by " + std::to_string(div) +
                      "; pick a window length that is a multiple of " +
                      std::to_string(div));
  Tensor h = x;
  for (auto& stage : stages) {
    h = stage.conv.forward(h);
    h = stage.bn.forward(h, training);
    h = relu(h);
    h = avgpool1d(h, cfg.pool_kernel, cfg.pool_stride);
  }
  return h;
}

void CnnBranch::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].conv.collect(out, prefix + ".stage" + std::to_string(i) +
                                    ".conv");
    stages[i].bn.collect(out, prefix + ".stage" + std::to_string(i) + ".bn");
  }
}

void CnnBranch::collect_stats(StatsList& out, const std::string& prefix) {
  for (std::size_t i = 0; i < stages.size(); ++i)
    stages[i].bn.collect_stats(out,
                               prefix + ".stage" + std::to_string(i) + ".bn");
}

SiameseCnn SiameseCnn::create(ParamInit& init, const CnnConfig& cfg) {
  SiameseCnn s;
  s.cfg = cfg;
  s.fast = CnnBranch::create(init, cfg);
  s.slow = CnnBranch::create(init, cfg);
  return s;
}

Tensor SiameseCnn::forward(const Tensor& fast_x, const Tensor& slow_x,
                           bool training) {
  if (fast_x.shape() != slow_x.shape())
    throw ShapeError("siamese: fast/slow width mismatch " +
                     shape_str(fast_x.shape()) + " vs " +
                     shape_str(slow_x.shape()));
  Tensor hf = fast.forward(fast_x, training);
  Tensor hs = slow.forward(slow_x, training);
  Tensor cat = concat({hf, hs}, 1);      // [N, 2C, W']
  return permute(cat, {0, 2, 1});        // [N, W', 2C] time-major tokens
}

void SiameseCnn::collect(ParamList& out, const std::string& prefix) const {
  fast.collect(out, prefix + ".fast");
  slow.collect(out, prefix + ".slow");
}

void SiameseCnn::collect_stats(StatsList& out, const std::string& prefix) {
  fast.collect_stats(out, prefix + ".fast");
  slow.collect_stats(out, prefix + ".slow");
}

}  // namespace emmix
