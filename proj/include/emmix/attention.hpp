#pragma once

// Scaled dot-product attention, multi-head attention and the
// transformer encoder block shared by every attention consumer.
//
// The encoder block follows the layout
//   Z = X + MultiHead(LN(X))
//   out = LN(MLP(LN(Z)) + Z)
// with a two-layer MLP (linear -> ReLU -> linear) and no masking.

#include <cstddef>
#include <string>
#include <vector>

#include "emmix/nn.hpp"
#include "emmix/tensor.hpp"

namespace emmix {

struct TransformerConfig {
  std::size_t model_dim = 256;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 0;  // 0 picks 4 * model_dim
  std::size_t layers = 1;
  std::size_t head_dim() const { return model_dim / heads; }
  std::size_t mlp_width() const {
    return mlp_hidden ? mlp_hidden : 4 * model_dim;
  }
  void validate() const;
};

// Softmax(Q·Kᵀ/√d_k)·V on a single instance: q [n_q×d_k], k [n_k×d_k],
// v [n_k×d_v].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
// Same contraction over a leading batch axis.
Tensor attention_batched(const Tensor& q, const Tensor& k, const Tensor& v);

// Sinusoidal table: PE(t,2i)=sin(t/10000^(2i/d)), PE(t,2i+1)=cos(...).
// d must be even.
Tensor positional_encoding(std::size_t T, std::size_t d);

struct MultiHeadAttention {
  TransformerConfig cfg;
  // d×d matrices whose column blocks are the per-head d×d'_k projections
  Linear wq, wk, wv, wo;
  static MultiHeadAttention create(ParamInit& init,
                                   const TransformerConfig& cfg);
  // x [N×T×d] (or [T×d], treated as batch 1)
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct EncoderBlock {
  MultiHeadAttention mha;
  LayerNormLayer ln_attn;  // applied to the attention input
  LayerNormLayer ln_mlp;   // applied to Z before the MLP
  LayerNormLayer ln_out;   // applied to the block output
  Linear mlp_in, mlp_out;
  static EncoderBlock create(ParamInit& init, const TransformerConfig& cfg);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct TransformerEncoder {
  std::vector<EncoderBlock> blocks;
  static TransformerEncoder create(ParamInit& init,
                                   const TransformerConfig& cfg);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace emmix
