#pragma once

#include "spectral/fft.hpp"

namespace sscm::data {

/// Centred k-space spectrum of `hr` [1,H,W] (or [H,W]) with everything outside
/// the central (H/s) x (W/s) block set to zero. Returned unshifted, i.e. ready
/// for ifft2.
template <typename T>
spectral::ComplexTensor<T> kspace_crop_spectrum(const Tensor<T>& hr, std::size_t scale);

/// Zero-padded low-resolution image on the full grid: k-space crop, inverse
/// transform, magnitude, clamp to [0, 1].
template <typename T>
Tensor<T> degrade_kspace(const Tensor<T>& hr, std::size_t scale);

} // namespace sscm::data
