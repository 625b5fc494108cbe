#include "emmix/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "emmix/attention.hpp"
#include "emmix/attlstm.hpp"
#include "emmix/errors.hpp"
#include "emmix/fourierformer.hpp"
#include "emmix/model.hpp"
#include "emmix/ops.hpp"
#include "emmix/siamese_cnn.hpp"

namespace emmix {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& g : groups) w = std::max(w, g.max_rel_err);
  return w;
}

bool GradCheckReport::passed(double tolerance) const {
  return !groups.empty() && worst() < tolerance;
}

namespace {

constexpr double kStep = 1e-5;
constexpr std::size_t kMaxCoordsPerGroup = 120;

struct CheckSetup {
  std::function<Tensor()> loss;
  ParamList leaves;  // name -> tensor; each leaf is one report group
};

double rel_err(double a, double b) {
  double denom = std::max({std::fabs(a), std::fabs(b), 1e-3});
  return std::fabs(a - b) / denom;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), std::move(v));
}

void run_setup(const CheckSetup& setup, std::uint64_t seed,
               bool perturb_gradient, GradCheckReport& report) {
  for (auto& [name, leaf] : setup.leaves) {
    (void)name;
    Tensor t = leaf;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = setup.loss();
  backward(loss);

  std::mt19937_64 pick(mix_seed(seed, 0xc0ed5ULL));
  bool injected = false;
  for (auto& [name, leaf] : setup.leaves) {
    Tensor t = leaf;
    std::vector<double> analytic = t.grad();
    if (perturb_gradient && !injected) {
      analytic[0] += 0.5;  // deliberate bug for detector sanity
      injected = true;
    }
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > kMaxCoordsPerGroup) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(kMaxCoordsPerGroup);
    }
    GradCheckGroup group;
    group.name = name;
    group.coords_checked = coords.size();
    auto& vals = t.mutable_values();
    for (std::size_t i : coords) {
      double keep = vals[i];
      vals[i] = keep + kStep;
      double lp = setup.loss().scalar();
      vals[i] = keep - kStep;
      double lm = setup.loss().scalar();
      vals[i] = keep;
      double fd = (lp - lm) / (2.0 * kStep);
      group.max_rel_err = std::max(group.max_rel_err,
                                   rel_err(analytic[i], fd));
    }
    report.groups.push_back(std::move(group));
  }
}

CheckSetup setup_numerics(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 1));
  auto a = random_tensor({3, 4}, *rng, -1, 1);
  auto b = random_tensor({4, 5}, *rng, -1, 1);
  auto gain = random_tensor({5}, *rng, 0.5, 1.5);
  auto bias = random_tensor({5}, *rng, -0.5, 0.5);
  auto cx = random_tensor({2, 2, 8}, *rng, -1, 1);
  auto cw = random_tensor({3, 2, 3}, *rng, -1, 1);
  auto cb = random_tensor({3}, *rng, -0.5, 0.5);
  auto r1 = random_tensor({3, 5}, *rng, -1, 1);
  auto r2 = random_tensor({2, 3, 4}, *rng, -1, 1);
  CheckSetup s;
  s.leaves = {{"matmul.a", a},  {"matmul.b", b},  {"layer_norm.gain", gain},
              {"layer_norm.bias", bias}, {"conv.x", cx}, {"conv.w", cw},
              {"conv.b", cb}};
  s.loss = [=] {
    // composite touching matmul, softmax, layer norm, tanh, conv, pool,
    // dft path and reductions
    Tensor m = layer_norm(softmax_rows(matmul(a, b)), gain, bias);
    Tensor head = sum_all(mul(tanh(m), r1));
    Tensor conv = avgpool1d(relu(conv1d_same(cx, cw, cb)));
    Tensor tail = sum_all(mul(conv, r2));
    auto spec = to_spectrum(reshape(conv, {3, 2, 4}));
    Tensor spectral = add(sum_all(spec.amplitude), sum_all(spec.phase));
    return add(add(head, tail), mul_scalar(spectral, 0.1));
  };
  return s;
}

CheckSetup setup_attention(std::uint64_t seed) {
  TransformerConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 4;
  cfg.mlp_hidden = 24;
  ParamInit init(mix_seed(seed, 2));
  auto block = std::make_shared<EncoderBlock>(EncoderBlock::create(init, cfg));
  auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 3));
  auto x = random_tensor({5, 16}, *rng, -1, 1);
  auto r = random_tensor({5, 16}, *rng, -1, 1);
  CheckSetup s;
  block->collect(s.leaves, "encoder");
  s.leaves.emplace_back("input", x);
  s.loss = [=] { return sum_all(mul(block->forward(x), r)); };
  return s;
}

CheckSetup setup_siamese(std::uint64_t seed) {
  CnnConfig cfg;
  cfg.stages = {{3, 2}, {5, 3}, {7, 3}, {9, 5}};
  ParamInit init(mix_seed(seed, 4));
  auto cnn = std::make_shared<SiameseCnn>(SiameseCnn::create(init, cfg));
  auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 5));
  auto xf = random_tensor({2, 2, 16}, *rng, -1, 1);
  auto xs = random_tensor({2, 2, 16}, *rng, -1, 1);
  auto r = random_tensor({2, 1, 10}, *rng, -1, 1);
  auto stats = std::make_shared<StatsList>();
  cnn->collect_stats(*stats, "cnn");
  auto saved = std::make_shared<std::vector<BnStats>>();
  for (auto& [name, st] : *stats) saved->push_back(*st);
  CheckSetup s;
  cnn->collect(s.leaves, "cnn");
  s.leaves.emplace_back("input.fast", xf);
  s.leaves.emplace_back("input.slow", xs);
  s.loss = [=] {
    for (std::size_t i = 0; i < stats->size(); ++i)
      *(*stats)[i].second = (*saved)[i];  // keep running stats frozen
    return sum_all(mul(cnn->forward(xf, xs, true), r));
  };
  return s;
}

CheckSetup setup_attlstm(std::uint64_t seed) {
  ParamInit init(mix_seed(seed, 6));
  auto cell = std::make_shared<AttLstm>(AttLstm::create(init, 32, 8));
  auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 7));
  auto x = random_tensor({1, 3, 32}, *rng, -1, 1);
  auto r = random_tensor({1, 3, 32}, *rng, -1, 1);
  CheckSetup s;
  cell->collect(s.leaves, "attlstm");
  s.leaves.emplace_back("input", x);
  s.loss = [=] { return sum_all(mul(cell->sequence(x), r)); };
  return s;
}

CheckSetup setup_fourierformer(std::uint64_t seed) {
  TransformerConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 4;
  cfg.mlp_hidden = 20;
  ParamInit init(mix_seed(seed, 8));
  auto ff = std::make_shared<Fourierformer>(Fourierformer::create(init, cfg));
  auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 9));
  auto x = random_tensor({4, 16}, *rng, -1.5, 1.5);
  auto r = random_tensor({4, 16}, *rng, -1, 1);
  CheckSetup s;
  ff->collect(s.leaves, "fourierformer");
  s.leaves.emplace_back("input", x);
  s.loss = [=] { return sum_all(mul(ff->forward(x), r)); };
  return s;
}

CheckSetup setup_model(std::uint64_t seed) {
  ModelConfig mc;
  mc.cnn.stages = {{3, 2}, {5, 3}, {7, 3}, {9, 4}};
  mc.transformer.heads = 2;
  mc.transformer.mlp_hidden = 12;
  mc.mix.attlstm_tokens = 2;
  mc.mix.layers = 2;
  mc.n_subjects = 3;
  auto model = std::make_shared<EmMixformer>(
      EmMixformer::create(mc, mix_seed(seed, 10)));
  auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 11));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto batch = std::make_shared<std::vector<PreprocessedSample>>();
  for (int n = 0; n < 2; ++n) {
    PreprocessedSample p;
    p.width = 32;
    p.fast.resize(64);
    p.slow.resize(64);
    for (auto& v : p.fast) v = dist(*rng);
    for (auto& v : p.slow) v = 0.9 * dist(*rng);
    p.subject_id = "s";
    batch->push_back(std::move(p));
  }
  auto labels = std::make_shared<std::vector<int>>(std::vector<int>{0, 2});
  auto stats = std::make_shared<StatsList>();
  auto saved = std::make_shared<std::vector<BnStats>>();
  *stats = model->stats();
  for (auto& [name, st] : *stats) saved->push_back(*st);
  CheckSetup s;
  s.leaves = model->params();
  s.loss = [=] {
    for (std::size_t i = 0; i < stats->size(); ++i)
      *(*stats)[i].second = (*saved)[i];
    std::vector<const PreprocessedSample*> ptrs;
    for (const auto& p : *batch) ptrs.push_back(&p);
    auto out = model->forward_batch(ptrs, /*training=*/true);
    return cross_entropy(out.logits, *labels);
  };
  return s;
}

}  // namespace

std::vector<std::string> gradcheck_module_names() {
  return {"numerics", "attention_core", "siamese_cnn",
          "attlstm",  "fourierformer",  "model"};
}

GradCheckReport gradcheck_module(const std::string& name, std::uint64_t seed,
                                 bool perturb_gradient) {
  GradCheckReport report;
  report.module = name;
  CheckSetup setup;
  if (name == "numerics")
    setup = setup_numerics(seed);
  else if (name == "attention_core")
    setup = setup_attention(seed);
  else if (name == "siamese_cnn")
    setup = setup_siamese(seed);
  else if (name == "attlstm")
    setup = setup_attlstm(seed);
  else if (name == "fourierformer")
    setup = setup_fourierformer(seed);
  else if (name == "model")
    setup = setup_model(seed);
  else
    throw ConfigError("gradcheck: unknown module '" + name + "'");
  run_setup(setup, seed, perturb_gradient, report);
  return report;
}

}  // namespace emmix
