#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "core/tensor.hpp"

namespace sscm::spectral {

// Conventions: forward transforms are unnormalised, inverse transforms carry
// the 1/(H*W) factor. Fast paths are radix-2 and reject other extents.

bool is_power_of_two(std::size_t n);

// Raw in-place transforms on interleaved complex buffers, unnormalised in both
// directions (the inverse uses the conjugate twiddles only).
template <typename T>
void fft1d_inplace(std::span<std::complex<T>> data, bool inverse);
template <typename T>
void fft2d_inplace(std::span<std::complex<T>> data, std::size_t height, std::size_t width, bool inverse);

/// Direct O((HW)^2) evaluation of the 2-D DFT for any extent, unnormalised.
/// Kept as the reference the fast path is tested against.
template <typename T>
std::vector<std::complex<T>> naive_dft2(std::span<const std::complex<T>> data, std::size_t height, std::size_t width,
                                        bool inverse);

template <typename T>
struct ComplexTensor {
    Tensor<T> re;
    Tensor<T> im;

    const Shape& shape() const { return re.shape(); }
};

// Differentiable transforms over the last two axes; leading axes are batch.
template <typename T>
ComplexTensor<T> fft2(const ComplexTensor<T>& x);
template <typename T>
ComplexTensor<T> ifft2(const ComplexTensor<T>& x);

// Real input [...,H,W] -> half spectrum [...,H,W/2+1].
template <typename T>
ComplexTensor<T> rfft2(const Tensor<T>& x);
// Half spectrum [...,H,W/2+1] -> real [...,H,W]. Bins other than the DC and
// Nyquist columns stand for themselves and their Hermitian mirror.
template <typename T>
Tensor<T> irfft2(const ComplexTensor<T>& x, std::size_t width);

// Moves the DC bin to (H/2, W/2); ifftshift2 undoes it for any extent.
template <typename T>
ComplexTensor<T> fftshift2(const ComplexTensor<T>& x);
template <typename T>
ComplexTensor<T> ifftshift2(const ComplexTensor<T>& x);

// Packing helpers between ComplexTensor and std::complex buffers.
template <typename T>
std::vector<std::complex<T>> to_complex(const ComplexTensor<T>& x);
template <typename T>
ComplexTensor<T> from_complex(const Shape& shape, std::span<const std::complex<T>> values);

} // namespace sscm::spectral
