#ifndef ACTFNO_FFT_HPP
#define ACTFNO_FFT_HPP

#include <complex>

#include "core/tensor.hpp"

namespace actfno {

// Half-spectrum of a 2D real FFT, stored as paired real tensors of shape
// (B, C, H, W/2+1). Convention: unnormalized forward transform,
// 1/(H*W)-normalized inverse. `width` records the full spatial width W so the
// inverse is unambiguous.
struct ComplexSpectrum {
  Tensor re;
  Tensor im;
  int64_t width = 0;
};

// Forward real FFT over the last two axes of (B,C,H,W). Differentiable.
ComplexSpectrum rfft2(const Tensor& x);

// Inverse of rfft2. The stored half-spectrum is Hermitian-completed for
// columns 0 < k2 < W/2; the self-conjugate columns are used verbatim and the
// imaginary residue of the full inverse is discarded, which makes the map
// linear and well-defined even for spectra that lost exact symmetry through
// per-mode weighting. Differentiable.
Tensor irfft2(const ComplexSpectrum& s);

// Raw single-plane helpers (no autodiff) for data generation.
// `out` has H*(W/2+1) entries; `in` is H*W row-major.
void rfft2_plane(const double* in, int64_t H, int64_t W, std::complex<double>* out);
void irfft2_plane(const std::complex<double>* in, int64_t H, int64_t W, double* out);

}  // namespace actfno

#endif
