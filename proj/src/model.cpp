#include "emmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "emmix/errors.hpp"
#include "emmix/ops.hpp"

namespace emmix {

void MixBlockConfig::validate() const {
  if (layers >= 1 && branch_count() == 0)
    throw ConfigError("mix block: at least one branch must be enabled");
  if (attlstm_tokens < 1)
    throw ConfigError("mix block: attlstm_tokens must be >= 1");
}

void ModelConfig::validate() const {
  cnn.validate();
  mix.validate();
  if (n_subjects < 1) throw ConfigError("model: n_subjects must be >= 1");
  if (transformer.model_dim != model_dim())
    throw ConfigError("model: transformer width " +
                      std::to_string(transformer.model_dim) +
                      " != 2x CNN channels " + std::to_string(model_dim()));
  transformer.validate();
  if (mix.enable_attlstm && !mix.legacy_lstm &&
      model_dim() % mix.attlstm_tokens != 0)
    throw ConfigError("model: width not divisible into attlstm tokens");
}

void ModelConfig::finalize() {
  transformer.model_dim = model_dim();
  validate();
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train: lr must be > 0");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
}

MixBlock MixBlock::create(ParamInit& init, const ModelConfig& mc) {
  MixBlock b;
  b.cfg = mc.mix;
  std::size_t d = mc.model_dim();
  if (b.cfg.enable_attlstm) {
    if (b.cfg.legacy_lstm)
      b.lstm = PeepholeLstm::create(init, d);
    else
      b.attlstm = AttLstm::create(init, d, b.cfg.attlstm_tokens);
  }
  if (b.cfg.enable_transformer)
    b.transformer = TransformerEncoder::create(init, mc.transformer);
  if (b.cfg.enable_fourier)
    b.fourier = Fourierformer::create(init, mc.transformer);
  b.proj = Linear::create(init, b.cfg.branch_count() * d, d);
  return b;
}

Tensor MixBlock::forward(const Tensor& x) const {
  // branch order fixed as (attLSTM, transformer, Fourier)
  std::vector<Tensor> branches;
  if (cfg.enable_attlstm)
    branches.push_back(cfg.legacy_lstm ? lstm.sequence(x)
                                       : attlstm.sequence(x));
  if (cfg.enable_transformer) branches.push_back(transformer.forward(x));
  if (cfg.enable_fourier) branches.push_back(fourier.forward(x));
  if (branches.empty()) throw ConfigError("mix block: no branches enabled");
  Tensor cat = branches.size() == 1 ? branches[0] : concat(branches, 2);
  return proj.forward(cat);
}

void MixBlock::collect(ParamList& out, const std::string& prefix) const {
  if (cfg.enable_attlstm) {
    if (cfg.legacy_lstm)
      lstm.collect(out, prefix + ".lstm");
    else
      attlstm.collect(out, prefix + ".attlstm");
  }
  if (cfg.enable_transformer)
    transformer.collect(out, prefix + ".transformer");
  if (cfg.enable_fourier) fourier.collect(out, prefix + ".fourier");
  proj.collect(out, prefix + ".proj");
}

Tensor batch_channels(const std::vector<const PreprocessedSample*>& samples,
                      bool fast_channel) {
  if (samples.empty()) throw DataError("batch_channels: empty batch");
  std::size_t W = samples[0]->width;
  std::vector<double> vals(samples.size() * 2 * W);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& src =
        fast_channel ? samples[n]->fast : samples[n]->slow;
    if (samples[n]->width != W || src.size() != 2 * W)
      throw DataError("batch_channels: inconsistent window widths");
    std::copy(src.begin(), src.end(), vals.begin() + n * 2 * W);
  }
  return Tensor::from_values({samples.size(), 2, W}, std::move(vals));
}

EmMixformer EmMixformer::create(const ModelConfig& cfg,
                                std::uint64_t init_seed) {
  ModelConfig mc = cfg;
  mc.finalize();
  EmMixformer m;
  m.config = mc;
  ParamInit init(init_seed);
  m.cnn = SiameseCnn::create(init, mc.cnn);
  for (std::size_t i = 0; i < mc.mix.layers; ++i)
    m.blocks.push_back(MixBlock::create(init, mc));
  m.classifier = Linear::create(init, mc.model_dim(), mc.n_subjects);
  return m;
}

Tensor EmMixformer::forward_tokens(const Tensor& fast, const Tensor& slow,
                                   bool training) {
  Tensor x = cnn.forward(fast, slow, training);  // [N,T,d]
  if (!blocks.empty()) {
    Tensor pe = positional_encoding(x.dim(1), x.dim(2));
    x = add_broadcast(x, pe);
    for (const auto& b : blocks) x = b.forward(x);
  }
  return x;
}

EmMixformer::Output EmMixformer::forward_batch(
    const std::vector<const PreprocessedSample*>& batch, bool training) {
  Tensor fast = batch_channels(batch, true);
  Tensor slow = batch_channels(batch, false);
  Tensor tokens = forward_tokens(fast, slow, training);
  Tensor embedding = mean_axis(tokens, 1);  // [N,d]
  Tensor logits = classifier.forward(embedding);
  return {logits, embedding};
}

EmMixformer::Output EmMixformer::forward(const PreprocessedSample& sample,
                                         bool training) {
  return forward_batch({&sample}, training);
}

ParamList EmMixformer::params() const {
  ParamList out;
  cnn.collect(out, "cnn");
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(out, "mix" + std::to_string(i));
  classifier.collect(out, "classifier");
  return out;
}

StatsList EmMixformer::stats() {
  StatsList out;
  cnn.collect_stats(out, "cnn");
  return out;
}

std::size_t EmMixformer::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params()) {
    (void)name;
    n += p.numel();
  }
  return n;
}

TrainResult train(EmMixformer& model, const Dataset& ds,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (ds.subjects.size() < 2)
    throw DataError("train: cross-entropy is degenerate with " +
                    std::to_string(ds.subjects.size()) + " subject(s)");
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    if (ds.split[i] == 0) train_idx.push_back(i);
  if (train_idx.empty()) throw DataError("train: empty train split");

  model.subjects = ds.subjects;
  Adam opt(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5bcdULL));

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t off = 0; off < train_idx.size(); off += cfg.batch) {
      std::size_t n = std::min(cfg.batch, train_idx.size() - off);
      std::vector<const PreprocessedSample*> batch(n);
      std::vector<int> labels(n);
      for (std::size_t j = 0; j < n; ++j) {
        const auto& s = ds.samples[train_idx[off + j]];
        batch[j] = &s;
        labels[j] = ds.subject_index(s.subject_id);
      }
      auto out = model.forward_batch(batch, /*training=*/true);
      Tensor loss = cross_entropy(out.logits, labels);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.scalar() * static_cast<double>(n);
      auto pred = argmax_rows(out.logits);
      for (std::size_t j = 0; j < n; ++j)
        if (pred[j] == labels[j]) ++hits;
      result.final_loss = loss.scalar();
    }
    EpochLog log{epoch,
                 loss_sum / static_cast<double>(train_idx.size()),
                 static_cast<double>(hits) /
                     static_cast<double>(train_idx.size())};
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

MixBlockConfig ablation_preset(const std::string& name) {
  MixBlockConfig c;
  if (name == "cnn_only") {
    c.layers = 0;
    c.enable_transformer = c.enable_attlstm = c.enable_fourier = false;
  } else if (name == "cnn_transformer") {
    c.enable_attlstm = false;
    c.enable_fourier = false;
  } else if (name == "lstm_transformer") {
    c.legacy_lstm = true;
    c.enable_fourier = false;
  } else if (name == "attlstm_transformer") {
    c.enable_fourier = false;
  } else if (name == "full") {
    // defaults
  } else {
    throw ConfigError("unknown ablation preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> ablation_names() {
  return {"cnn_only", "cnn_transformer", "lstm_transformer",
          "attlstm_transformer", "full"};
}

}  // namespace emmix
