#include "emmix/attlstm.hpp"

#include "emmix/attention.hpp"
#include "emmix/errors.hpp"
#include "emmix/ops.hpp"

namespace emmix {

LstmState zero_state(std::size_t batch, std::size_t dim) {
  return {Tensor::zeros({batch, dim}), Tensor::zeros({batch, dim})};
}

namespace {

// x·W + h·U + c·V + b, any term after x optional
Tensor affine(const Tensor& x, const Tensor& w, const Tensor* h,
              const Tensor* u, const Tensor* c, const Tensor* v,
              const Tensor& b) {
  Tensor acc = matmul(x, w);
  if (h) acc = add(acc, matmul(*h, *u));
  if (c) acc = add(acc, matmul(*c, *v));
  return add_broadcast(acc, b);
}

Tensor seq_step_input(const Tensor& x_seq, std::size_t t) {
  std::size_t N = x_seq.dim(0), d = x_seq.dim(2);
  return reshape(slice_axis(x_seq, 1, t, 1), {N, d});
}

Tensor stack_steps(const std::vector<Tensor>& hs) {
  std::vector<Tensor> rows;
  rows.reserve(hs.size());
  for (const auto& h : hs)
    rows.push_back(reshape(h, {h.dim(0), 1, h.dim(1)}));
  return concat(rows, 1);
}

}  // namespace

PeepholeLstm PeepholeLstm::create(ParamInit& init, std::size_t dim) {
  PeepholeLstm l;
  l.dim = dim;
  auto mat = [&] { return init.uniform({dim, dim}, dim); };
  auto vec = [&] { return init.uniform({dim}, dim); };
  l.wf = mat(); l.uf = mat(); l.vf = mat(); l.bf = vec();
  l.wi = mat(); l.ui = mat(); l.vi = mat(); l.bi = vec();
  l.wo = mat(); l.uo = mat(); l.vo = mat(); l.bo = vec();
  l.wc = mat(); l.uc = mat(); l.bc = vec();
  return l;
}

LstmState PeepholeLstm::step(const Tensor& x, const LstmState& s) const {
  if (x.shape().back() != dim)
    throw ShapeError("peephole step: input width != " + std::to_string(dim));
  Tensor f = sigmoid(affine(x, wf, &s.h, &uf, &s.c, &vf, bf));
  Tensor i = sigmoid(affine(x, wi, &s.h, &ui, &s.c, &vi, bi));
  Tensor cand = tanh(affine(x, wc, &s.h, &uc, nullptr, nullptr, bc));
  Tensor c_t = add(mul(f, s.c), mul(i, cand));
  Tensor o = sigmoid(affine(x, wo, &s.h, &uo, &c_t, &vo, bo));
  Tensor h_t = mul(o, tanh(c_t));
  return {h_t, c_t};
}

Tensor PeepholeLstm::sequence(const Tensor& x_seq) const {
  if (x_seq.ndim() != 3)
    throw ShapeError("peephole sequence: expected [N,T,d]");
  std::size_t T = x_seq.dim(1);
  LstmState s = zero_state(x_seq.dim(0), dim);
  std::vector<Tensor> hs;
  hs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    s = step(seq_step_input(x_seq, t), s);
    hs.push_back(s.h);
  }
  return stack_steps(hs);
}

void PeepholeLstm::collect(ParamList& out, const std::string& prefix) const {
  const char* names[] = {"wf", "uf", "vf", "bf", "wi", "ui", "vi", "bi",
                         "wo", "uo", "vo", "bo", "wc", "uc", "bc"};
  const Tensor* ts[] = {&wf, &uf, &vf, &bf, &wi, &ui, &vi, &bi,
                        &wo, &uo, &vo, &bo, &wc, &uc, &bc};
  for (std::size_t i = 0; i < 15; ++i)
    out.emplace_back(prefix + "." + names[i], *ts[i]);
}

AttLstm AttLstm::create(ParamInit& init, std::size_t dim,
                        std::size_t n_tokens) {
  if (n_tokens == 0 || dim % n_tokens != 0)
    throw ConfigError("attlstm: dim " + std::to_string(dim) +
                      " not divisible into " + std::to_string(n_tokens) +
                      " tokens");
  AttLstm l;
  l.dim = dim;
  l.n_tokens = n_tokens;
  l.token_dim = dim / n_tokens;
  auto proj = [&] { return init.uniform({l.token_dim, l.token_dim},
                                        l.token_dim); };
  l.qx = proj(); l.kx = proj(); l.vx = proj();
  l.qh = proj(); l.kh = proj(); l.vh = proj();
  l.qc = proj(); l.kc = proj(); l.vc = proj();
  l.gate_i = Linear::create(init, 3 * dim, dim);
  l.gate_f = Linear::create(init, 3 * dim, dim);
  l.gate_o = Linear::create(init, 2 * dim, dim);
  l.candidate = Linear::create(init, 2 * dim, dim);
  return l;
}

AttLstmGates AttLstm::attention_gates(const Tensor& x,
                                      const LstmState& s) const {
  std::size_t N = x.dim(0);
  auto tokens = [&](const Tensor& v) {
    return reshape(v, {N, n_tokens, token_dim});
  };
  auto project = [&](const Tensor& tok, const Tensor& m) {
    Tensor flat = reshape(tok, {N * n_tokens, token_dim});
    return reshape(matmul(flat, m), {N, n_tokens, token_dim});
  };
  Tensor xt = tokens(x), ht = tokens(s.h), ct = tokens(s.c);
  Tensor q_x = project(xt, qx), k_x = project(xt, kx), v_x = project(xt, vx);
  Tensor q_h = project(ht, qh), k_h = project(ht, kh), v_h = project(ht, vh);
  Tensor q_c = project(ct, qc);
  auto flat = [&](const Tensor& t) { return reshape(t, {N, dim}); };
  AttLstmGates g;
  g.sa_x = flat(attention_batched(q_x, k_x, v_x));
  g.sa_h = flat(attention_batched(q_h, k_h, v_h));
  g.ca_x = flat(attention_batched(q_x, k_h, v_h));
  g.ca_h = flat(attention_batched(q_h, k_x, v_x));
  g.ca_c = flat(attention_batched(q_c, k_h, v_h));
  return g;
}

LstmState AttLstm::step(const Tensor& x, const LstmState& s) const {
  if (x.shape().back() != dim)
    throw ShapeError("attlstm step: input width != " + std::to_string(dim));
  AttLstmGates g = attention_gates(x, s);
  Tensor i = sigmoid(gate_i.forward(concat({g.sa_x, g.sa_h, g.ca_c}, 1)));
  Tensor f = sigmoid(gate_f.forward(concat({g.ca_h, g.sa_x, g.ca_c}, 1)));
  Tensor o = sigmoid(gate_o.forward(concat({g.ca_x, g.sa_h}, 1)));
  Tensor cand = tanh(candidate.forward(concat({g.sa_x, g.sa_h}, 1)));
  Tensor c_t = add(mul(f, s.c), mul(i, cand));
  Tensor h_t = mul(o, tanh(c_t));
  return {h_t, c_t};
}

Tensor AttLstm::sequence(const Tensor& x_seq) const {
  if (x_seq.ndim() != 3)
    throw ShapeError("attlstm sequence: expected [N,T,d]");
  std::size_t T = x_seq.dim(1);
  LstmState s = zero_state(x_seq.dim(0), dim);
  std::vector<Tensor> hs;
  hs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    s = step(seq_step_input(x_seq, t), s);
    hs.push_back(s.h);
  }
  return stack_steps(hs);
}

void AttLstm::collect(ParamList& out, const std::string& prefix) const {
  const char* names[] = {"qx", "kx", "vx", "qh", "kh", "vh", "qc", "kc", "vc"};
  const Tensor* ts[] = {&qx, &kx, &vx, &qh, &kh, &vh, &qc, &kc, &vc};
  for (std::size_t i = 0; i < 9; ++i)
    out.emplace_back(prefix + "." + names[i], *ts[i]);
  gate_i.collect(out, prefix + ".gate_i");
  gate_f.collect(out, prefix + ".gate_f");
  gate_o.collect(out, prefix + ".gate_o");
  candidate.collect(out, prefix + ".candidate");
}

}  // namespace emmix
