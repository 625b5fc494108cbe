#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "emmix/errors.hpp"
#include "emmix/ops.hpp"
#include "emmix/siamese_cnn.hpp"
#include "testutil.hpp"

using namespace emmix;
using testutil::fd_check;
using testutil::rand_tensor;

namespace {

CnnConfig toy_config() {
  CnnConfig cfg;
  cfg.stages = {{3, 3}, {5, 4}, {7, 5}, {9, 6}};
  return cfg;
}

}  // namespace

TEST_CASE("branch output width is W / 16") {
  ParamInit init(301);
  auto branch = CnnBranch::create(init, toy_config());
  std::mt19937_64 rng(301);
  Tensor x = rand_tensor({2, 2, 64}, rng);
  Tensor y = branch.forward(x, true);
  CHECK(y.shape() == Shape{2, 6, 4});
}

TEST_CASE("width not divisible by 16 raises an instructive error") {
  ParamInit init(303);
  auto branch = CnnBranch::create(init, toy_config());
  Tensor x = Tensor::zeros({1, 2, 60});
  try {
    branch.forward(x, true);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("window length") != std::string::npos);
  }
}

TEST_CASE("zero input with zero conv biases collapses to a per-channel constant") {
  ParamInit init(305);
  auto branch = CnnBranch::create(init, toy_config());
  for (auto& st : branch.stages)
    std::fill(st.conv.bias.mutable_values().begin(),
              st.conv.bias.mutable_values().end(), 0.0);
  Tensor x = Tensor::zeros({3, 2, 32});
  Tensor y = branch.forward(x, true);
  std::size_t N = y.dim(0), C = y.dim(1), W = y.dim(2);
  for (std::size_t c = 0; c < C; ++c) {
    double ref = y.at(c * W);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < W; ++t)
        CHECK(y.at((n * C + c) * W + t) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("nonnegative conv output pools to the direct mean-pool oracle") {
  // eval mode with fresh running stats (mean 0, var 1) keeps the values
  // nonnegative through BN up to the 1/sqrt(1+eps) factor, so ReLU is
  // the identity and the stage reduces to mean pooling of the conv.
  ParamInit init(307);
  CnnConfig cfg = toy_config();
  auto branch = CnnBranch::create(init, cfg);
  auto& st = branch.stages[0];
  for (double& v : st.conv.weight.mutable_values()) v = std::fabs(v);
  for (double& v : st.conv.bias.mutable_values()) v = std::fabs(v);
  std::mt19937_64 rng(307);
  Tensor x = rand_tensor({2, 2, 16}, rng, 0.0, 1.0);
  Tensor conv_out = st.conv.forward(x);
  Tensor stage_out = avgpool1d(
      relu(st.bn.forward(conv_out, /*training=*/false)), 2, 2);
  double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  std::size_t N = 2, C = 3, W = 16;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < W / 2; ++t) {
        double expect = scale * 0.5 *
                        (conv_out.at((n * C + c) * W + 2 * t) +
                         conv_out.at((n * C + c) * W + 2 * t + 1));
        CHECK(std::fabs(stage_out.at((n * C + c) * (W / 2) + t) - expect) <
              1e-12);
      }
}

TEST_CASE("default config maps a 1024 window to 64 tokens of width 256") {
  ParamInit init(309);
  auto siamese = SiameseCnn::create(init, CnnConfig{});
  CHECK(siamese.model_dim() == 256);
  std::mt19937_64 rng(309);
  Tensor xf = rand_tensor({1, 2, 1024}, rng);
  Tensor xs = rand_tensor({1, 2, 1024}, rng);
  Tensor tokens = siamese.forward(xf, xs, true);
  CHECK(tokens.shape() == Shape{1, 64, 256});
}

TEST_CASE("zero slow channel contributes a constant half") {
  ParamInit init(311);
  auto siamese = SiameseCnn::create(init, toy_config());
  for (auto& st : siamese.slow.stages)
    std::fill(st.conv.bias.mutable_values().begin(),
              st.conv.bias.mutable_values().end(), 0.0);
  std::mt19937_64 rng(311);
  Tensor xf = rand_tensor({2, 2, 32}, rng);
  Tensor xs = Tensor::zeros({2, 2, 32});
  Tensor tokens = siamese.forward(xf, xs, true);  // [2, 2, 12]
  std::size_t T = tokens.dim(1), d = tokens.dim(2);
  std::size_t C = 6;
  // slow half (last C columns) is constant across batch and time
  for (std::size_t c = 0; c < C; ++c) {
    double ref = tokens.at(0 * d + C + c);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t t = 0; t < T; ++t)
        CHECK(tokens.at((n * T + t) * d + C + c) ==
              doctest::Approx(ref).epsilon(1e-12));
  }
  // fast half varies over time
  bool varies = false;
  for (std::size_t t = 1; t < T && !varies; ++t)
    if (std::fabs(tokens.at(t * d) - tokens.at(0)) > 1e-9) varies = true;
  CHECK(varies);
}

TEST_CASE("conv stage is translation-covariant before batch norm") {
  ParamInit init(313);
  auto branch = CnnBranch::create(init, toy_config());
  std::mt19937_64 rng(313);
  std::size_t W = 32, shift = 2;
  Tensor x = rand_tensor({1, 2, W}, rng);
  std::vector<double> shifted(2 * W, 0.0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = shift; t < W; ++t)
      shifted[c * W + t] = x.at(c * W + t - shift);
  Tensor xs = Tensor::from_values({1, 2, W}, std::move(shifted));
  Tensor y = branch.stages[0].conv.forward(x);
  Tensor ys = branch.stages[0].conv.forward(xs);
  std::size_t K = 3, halo = K / 2 + shift;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = halo; t < W - halo; ++t)
      CHECK(std::fabs(ys.at(c * W + t) - y.at(c * W + t - shift)) < 1e-12);
}

TEST_CASE("siamese gradients match finite differences") {
  ParamInit init(315);
  CnnConfig cfg;
  cfg.stages = {{3, 2}, {5, 3}, {7, 3}, {9, 4}};
  auto siamese = SiameseCnn::create(init, cfg);
  ParamList params;
  siamese.collect(params, "cnn");
  std::mt19937_64 rng(315);
  Tensor xf = rand_tensor({2, 2, 16}, rng);
  Tensor xs = rand_tensor({2, 2, 16}, rng);
  Tensor r = rand_tensor({2, 1, 8}, rng);
  std::vector<Tensor> leaves = {xf, xs};
  for (auto& [name, p] : params) leaves.push_back(p);
  StatsList stats;
  siamese.collect_stats(stats, "cnn");
  std::vector<BnStats> saved;
  for (auto& [name, s] : stats) saved.push_back(*s);
  auto loss = [&] {
    // keep running statistics frozen across FD evaluations
    for (std::size_t i = 0; i < stats.size(); ++i) *stats[i].second = saved[i];
    return sum_all(mul(siamese.forward(xf, xs, true), r));
  };
  CHECK(fd_check(loss, leaves) < 1e-4);
}

TEST_CASE("config validation: stage count and kernel growth") {
  CnnConfig three;
  three.stages = {{3, 4}, {5, 4}, {7, 4}};
  CHECK_THROWS_AS(three.validate(), ConfigError);
  CnnConfig flat;
  flat.stages = {{3, 4}, {3, 4}, {7, 4}, {9, 4}};
  CHECK_THROWS_AS(flat.validate(), ConfigError);
  CHECK_NOTHROW(CnnConfig{}.validate());
}
