#pragma once

// Frequency-domain attention branch. The token sequence is transformed
// per feature channel along the time axis (unitary DFT), split into
// amplitude and phase, run through two parameter-independent encoder
// stacks over the frequency axis, recombined as a complex spectrum and
// inverted; the real part is the branch output.

#include <string>

#include "emmix/attention.hpp"
#include "emmix/nn.hpp"
#include "emmix/tensor.hpp"

namespace emmix {

struct SpectralPair {
  Tensor amplitude;  // nonnegative, [N,T,d] (or [T,d])
  Tensor phase;      // principal range (-pi, pi]
};

// Per-channel DFT along the time axis; A = sqrt(Re^2+Im^2),
// phase = atan2(Im, Re).
SpectralPair to_spectrum(const Tensor& x);
// Re = A cos(phase), Im = A sin(phase), unitary inverse along the
// frequency axis; returns the real part.
Tensor from_spectrum(const SpectralPair& sp);

struct Fourierformer {
  TransformerConfig cfg;
  TransformerEncoder amp_encoder;
  TransformerEncoder phase_encoder;
  // bypass: spectral attention replaced by the identity (and no
  // positional table), so forward reduces to the DFT round trip
  bool identity_bypass = false;

  static Fourierformer create(ParamInit& init, const TransformerConfig& cfg);
  // positional encoding over the frequency index is added to both
  // components before their encoders
  SpectralPair spectral_attention(const SpectralPair& sp) const;
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace emmix
