#include "emmix/fourierformer.hpp"

#include "emmix/errors.hpp"
#include "emmix/ops.hpp"

namespace emmix {

namespace {

// Apply a T×T operator along axis 1 of [N,T,d]: one matmul on the
// [T, N*d] fold.
Tensor apply_time_operator(const Tensor& m, const Tensor& x) {
  std::size_t N = x.dim(0), T = x.dim(1), d = x.dim(2);
  Tensor folded = reshape(permute(x, {1, 0, 2}), {T, N * d});
  Tensor y = matmul(m, folded);
  return permute(reshape(y, {T, N, d}), {1, 0, 2});
}

Tensor as_batched(const Tensor& x, bool& squeezed) {
  squeezed = x.ndim() == 2;
  return squeezed ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
}

Tensor maybe_squeeze(const Tensor& x, bool squeezed) {
  return squeezed ? reshape(x, {x.dim(1), x.dim(2)}) : x;
}

}  // namespace

SpectralPair to_spectrum(const Tensor& x_in) {
  bool squeezed;
  Tensor x = as_batched(x_in, squeezed);
  if (x.ndim() != 3) throw ShapeError("to_spectrum: expected [N,T,d] or [T,d]");
  auto [C, S] = dft_matrices(x.dim(1));
  Tensor re = apply_time_operator(C, x);
  Tensor im = mul_scalar(apply_time_operator(S, x), -1.0);
  Tensor amp = sqrt(add(mul(re, re), mul(im, im)));
  Tensor phase = atan2(im, re);
  return {maybe_squeeze(amp, squeezed), maybe_squeeze(phase, squeezed)};
}

Tensor from_spectrum(const SpectralPair& sp) {
  if (sp.amplitude.shape() != sp.phase.shape())
    throw ShapeError("from_spectrum: amplitude/phase shape mismatch " +
                     shape_str(sp.amplitude.shape()) + " vs " +
                     shape_str(sp.phase.shape()));
  bool squeezed;
  Tensor amp = as_batched(sp.amplitude, squeezed);
  Tensor phase = as_batched(sp.phase, squeezed);
  Tensor re = mul(amp, cos(phase));
  Tensor im = mul(amp, sin(phase));
  auto [C, S] = dft_matrices(amp.dim(1));
  // real part of the unitary inverse: C·Re − S·Im
  Tensor x = sub(apply_time_operator(C, re), apply_time_operator(S, im));
  return maybe_squeeze(x, squeezed);
}

Fourierformer Fourierformer::create(ParamInit& init,
                                    const TransformerConfig& cfg) {
  Fourierformer f;
  f.cfg = cfg;
  f.amp_encoder = TransformerEncoder::create(init, cfg);
  f.phase_encoder = TransformerEncoder::create(init, cfg);
  return f;
}

SpectralPair Fourierformer::spectral_attention(const SpectralPair& sp) const {
  if (identity_bypass) return sp;
  bool squeezed;
  Tensor amp = as_batched(sp.amplitude, squeezed);
  Tensor phase = as_batched(sp.phase, squeezed);
  Tensor pe = positional_encoding(amp.dim(1), amp.dim(2));
  Tensor a_out = amp_encoder.forward(add_broadcast(amp, pe));
  Tensor p_out = phase_encoder.forward(add_broadcast(phase, pe));
  return {maybe_squeeze(a_out, squeezed), maybe_squeeze(p_out, squeezed)};
}

Tensor Fourierformer::forward(const Tensor& x) const {
  return from_spectrum(spectral_attention(to_spectrum(x)));
}

void Fourierformer::collect(ParamList& out, const std::string& prefix) const {
  amp_encoder.collect(out, prefix + ".amp");
  phase_encoder.collect(out, prefix + ".phase");
}

}  // namespace emmix
