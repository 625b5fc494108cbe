#pragma once

// Full network assembly: Siamese CNN tokens -> positional encoding ->
// stacked mix blocks -> temporal mean pooling -> embedding -> logits.
// A mix block concatenates its enabled branch outputs (attention LSTM,
// transformer, Fourier transformer) along the feature axis and
// projects back to the model width.

#include <cstdint>
#include <string>
#include <vector>

#include "emmix/attention.hpp"
#include "emmix/attlstm.hpp"
#include "emmix/data.hpp"
#include "emmix/fourierformer.hpp"
#include "emmix/nn.hpp"
#include "emmix/preprocessing.hpp"
#include "emmix/siamese_cnn.hpp"
#include "emmix/tensor.hpp"

namespace emmix {

struct MixBlockConfig {
  bool enable_transformer = true;
  bool enable_attlstm = true;
  bool enable_fourier = true;
  bool legacy_lstm = false;  // peephole cell instead of the attention cell
  std::size_t layers = 2;    // 0 drops the mix block entirely (CNN-only)
  std::size_t attlstm_tokens = 16;
  std::size_t branch_count() const {
    return (enable_transformer ? 1 : 0) + (enable_attlstm ? 1 : 0) +
           (enable_fourier ? 1 : 0);
  }
  void validate() const;
};

struct ModelConfig {
  CnnConfig cnn;
  TransformerConfig transformer;  // model_dim must equal 2x CNN channels
  MixBlockConfig mix;
  std::size_t n_subjects = 0;
  std::size_t model_dim() const { return 2 * cnn.out_channels(); }
  void validate() const;
  // fills transformer.model_dim and checks consistency
  void finalize();
};

struct TrainConfig {
  double lr = 0.0002;
  std::size_t batch = 64;
  std::size_t epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  void validate() const;
};

struct MixBlock {
  MixBlockConfig cfg;
  TransformerEncoder transformer;
  AttLstm attlstm;
  PeepholeLstm lstm;
  Fourierformer fourier;
  Linear proj;  // (branches * d) -> d
  static MixBlock create(ParamInit& init, const ModelConfig& mc);
  Tensor forward(const Tensor& x) const;  // [N,T,d] -> [N,T,d]
  void collect(ParamList& out, const std::string& prefix) const;
};

// Batched channel tensor [N x 2 x W] from sample windows.
Tensor batch_channels(const std::vector<const PreprocessedSample*>& samples,
                      bool fast_channel);

class EmMixformer {
 public:
  ModelConfig config;
  SiameseCnn cnn;
  std::vector<MixBlock> blocks;
  Linear classifier;                  // d -> n_subjects
  std::vector<std::string> subjects;  // label table, fixed by training

  static EmMixformer create(const ModelConfig& cfg, std::uint64_t init_seed);

  // Mix-block output tokens [N,T,d] (before temporal pooling).
  Tensor forward_tokens(const Tensor& fast, const Tensor& slow,
                        bool training);

  struct Output {
    Tensor logits;     // [N, n_subjects]
    Tensor embedding;  // [N, d]
  };
  Output forward_batch(const std::vector<const PreprocessedSample*>& batch,
                       bool training);
  Output forward(const PreprocessedSample& sample, bool training = false);

  ParamList params() const;
  StatsList stats();
  std::size_t param_count() const;
};

struct EpochLog {
  std::size_t epoch;
  double mean_loss;
  double accuracy;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double final_loss = 0.0;
};

// Mini-batch Adam over the train split; shuffling, initialization and
// everything downstream are deterministic given cfg.seed.
TrainResult train(EmMixformer& model, const Dataset& ds,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Named ablation presets mirroring the published configuration lattice.
MixBlockConfig ablation_preset(const std::string& name);
std::vector<std::string> ablation_names();

}  // namespace emmix
