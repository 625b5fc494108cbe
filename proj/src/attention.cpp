#include "emmix/attention.hpp"

#include <cmath>

#include "emmix/errors.hpp"
#include "emmix/ops.hpp"

namespace emmix {

void TransformerConfig::validate() const {
  if (model_dim < 1 || heads < 1 || layers < 1)
    throw ConfigError("transformer config: all fields must be >= 1");
  if (model_dim % heads != 0)
    throw ConfigError("transformer config: model_dim " +
                      std::to_string(model_dim) + " not divisible by heads " +
                      std::to_string(heads));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw ShapeError("attention: expected 2-D q/k/v");
  if (q.dim(1) != k.dim(1))
    throw ShapeError("attention: d_k mismatch " + shape_str(q.shape()) +
                     " vs " + shape_str(k.shape()));
  if (k.dim(0) != v.dim(0))
    throw ShapeError("attention: key/value row mismatch");
  double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor logits = mul_scalar(matmul(q, k, false, true), scale);
  return matmul(softmax_rows(logits), v);
}

Tensor attention_batched(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
    throw ShapeError("attention_batched: expected 3-D q/k/v");
  double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  Tensor logits = mul_scalar(bmm(q, k, false, true), scale);
  return bmm(softmax_rows(logits), v);
}

Tensor positional_encoding(std::size_t T, std::size_t d) {
  if (d % 2 != 0)
    throw ConfigError("positional_encoding: dimension must be even, got " +
                      std::to_string(d));
  std::vector<double> pe(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                          static_cast<double>(d));
      double arg = static_cast<double>(t) * freq;
      pe[t * d + 2 * i] = std::sin(arg);
      pe[t * d + 2 * i + 1] = std::cos(arg);
    }
  return Tensor::from_values({T, d}, std::move(pe));
}

MultiHeadAttention MultiHeadAttention::create(ParamInit& init,
                                              const TransformerConfig& cfg) {
  cfg.validate();
  MultiHeadAttention m;
  m.cfg = cfg;
  std::size_t d = cfg.model_dim;
  m.wq = Linear::create(init, d, d, /*with_bias=*/false);
  m.wk = Linear::create(init, d, d, false);
  m.wv = Linear::create(init, d, d, false);
  m.wo = Linear::create(init, d, d, false);
  return m;
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
  bool squeeze = x.ndim() == 2;
  Tensor xs = squeeze ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  std::size_t N = xs.dim(0), T = xs.dim(1), d = xs.dim(2);
  if (d != cfg.model_dim)
    throw ShapeError("multi_head: input width " + std::to_string(d) +
                     " != model_dim " + std::to_string(cfg.model_dim));
  std::size_t L = cfg.heads, dk = cfg.head_dim();

  auto split_heads = [&](const Tensor& t) {
    // [N,T,d] -> [N*L, T, dk]
    Tensor r = reshape(t, {N, T, L, dk});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {N * L, T, dk});
  };
  Tensor q = split_heads(wq.forward(xs));
  Tensor k = split_heads(wk.forward(xs));
  Tensor v = split_heads(wv.forward(xs));

  Tensor heads = attention_batched(q, k, v);  // [N*L, T, dk]
  Tensor merged = reshape(heads, {N, L, T, dk});
  merged = permute(merged, {0, 2, 1, 3});
  merged = reshape(merged, {N, T, d});
  Tensor out = wo.forward(merged);
  return squeeze ? reshape(out, {T, d}) : out;
}

void MultiHeadAttention::collect(ParamList& out,
                                 const std::string& prefix) const {
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  wo.collect(out, prefix + ".wo");
}

EncoderBlock EncoderBlock::create(ParamInit& init,
                                  const TransformerConfig& cfg) {
  EncoderBlock b;
  b.mha = MultiHeadAttention::create(init, cfg);
  std::size_t d = cfg.model_dim;
  b.ln_attn = LayerNormLayer::create(d);
  b.ln_mlp = LayerNormLayer::create(d);
  b.ln_out = LayerNormLayer::create(d);
  b.mlp_in = Linear::create(init, d, cfg.mlp_width());
  b.mlp_out = Linear::create(init, cfg.mlp_width(), d);
  return b;
}

Tensor EncoderBlock::forward(const Tensor& x) const {
  Tensor z = add(x, mha.forward(ln_attn.forward(x)));
  Tensor h = mlp_out.forward(relu(mlp_in.forward(ln_mlp.forward(z))));
  return ln_out.forward(add(h, z));
}

void EncoderBlock::collect(ParamList& out, const std::string& prefix) const {
  mha.collect(out, prefix + ".mha");
  ln_attn.collect(out, prefix + ".ln_attn");
  ln_mlp.collect(out, prefix + ".ln_mlp");
  ln_out.collect(out, prefix + ".ln_out");
  mlp_in.collect(out, prefix + ".mlp_in");
  mlp_out.collect(out, prefix + ".mlp_out");
}

TransformerEncoder TransformerEncoder::create(ParamInit& init,
                                              const TransformerConfig& cfg) {
  TransformerEncoder e;
  for (std::size_t i = 0; i < cfg.layers; ++i)
    e.blocks.push_back(EncoderBlock::create(init, cfg));
  return e;
}

Tensor TransformerEncoder::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& b : blocks) h = b.forward(h);
  return h;
}

void TransformerEncoder::collect(ParamList& out,
                                 const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(out, prefix + ".block" + std::to_string(i));
}

}  // namespace emmix
