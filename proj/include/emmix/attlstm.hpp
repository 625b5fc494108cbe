#pragma once

// Recurrent cells for the short-dependency feature stream: the
// peephole LSTM baseline (gates observe the cell state) and the
// attention LSTM, whose gates are computed from self- and
// cross-attention among the input, hidden and cell vectors.
//
// Attention inside the cell operates on the vector reshaped into
// n_tokens x token_dim tokens; a single head, flattened back to the
// cell width afterwards.

#include <cstddef>
#include <string>

#include "emmix/nn.hpp"
#include "emmix/tensor.hpp"

namespace emmix {

struct LstmState {
  Tensor h;  // [N, d]
  Tensor c;  // [N, d]
};

LstmState zero_state(std::size_t batch, std::size_t dim);

// Gate order in the parameter blocks: forget, input, output, candidate.
struct PeepholeLstm {
  std::size_t dim = 0;
  Tensor wf, uf, vf, bf;
  Tensor wi, ui, vi, bi;
  Tensor wo, uo, vo, bo;
  Tensor wc, uc, bc;
  static PeepholeLstm create(ParamInit& init, std::size_t dim);
  // Forget/input gates peek at C_{t-1}; the output gate peeks at C_t.
  LstmState step(const Tensor& x, const LstmState& s) const;
  Tensor sequence(const Tensor& x_seq) const;  // [N,T,d] -> [N,T,d]
  void collect(ParamList& out, const std::string& prefix) const;
};

struct AttLstmGates {
  Tensor sa_x, sa_h, ca_x, ca_h, ca_c;  // each [N, d]
};

struct AttLstm {
  std::size_t dim = 0;
  std::size_t n_tokens = 16;
  std::size_t token_dim = 0;
  // per-source token projections (x, h, C each get Q/K/V)
  Tensor qx, kx, vx;
  Tensor qh, kh, vh;
  Tensor qc, kc, vc;
  // gate linears over concatenated attention outputs
  Linear gate_i;     // concat(SA_x, SA_h, CA_c) -> d
  Linear gate_f;     // concat(CA_h, SA_x, CA_c) -> d
  Linear gate_o;     // concat(CA_x, SA_h)       -> d
  Linear candidate;  // concat(SA_x, SA_h)       -> d

  static AttLstm create(ParamInit& init, std::size_t dim,
                        std::size_t n_tokens);
  AttLstmGates attention_gates(const Tensor& x, const LstmState& s) const;
  LstmState step(const Tensor& x, const LstmState& s) const;
  Tensor sequence(const Tensor& x_seq) const;  // [N,T,d] -> [N,T,d]
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace emmix
