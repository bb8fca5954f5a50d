#include "data/degrade.hpp"

#include <algorithm>
#include <cmath>

namespace sscm::data {

namespace {
template <typename T>
void check_grid(const Tensor<T>& hr, std::size_t scale)
{
    if (hr.ndim() < 2)
        throw ShapeError("degrade: expected an image, got " + shape_str(hr.shape()));
    const auto h = hr.dim(hr.ndim() - 2), w = hr.dim(hr.ndim() - 1);
    if (scale == 0 || h % scale != 0 || w % scale != 0)
        throw ConfigError("scale " + std::to_string(scale) + " does not divide the " + std::to_string(h) + "x" +
                          std::to_string(w) + " grid");
    if (!spectral::is_power_of_two(h) || !spectral::is_power_of_two(w))
        throw UnsupportedSizeError("degrade: " + std::to_string(h) + "x" + std::to_string(w) +
                                   " grid is not a power of two");
}
} // namespace

template <typename T>
spectral::ComplexTensor<T> kspace_crop_spectrum(const Tensor<T>& hr, std::size_t scale)
{
    check_grid(hr, scale);
    const auto h = hr.dim(hr.ndim() - 2), w = hr.dim(hr.ndim() - 1);
    NoGradScope<T> no_grad;
    auto centred = spectral::fftshift2(spectral::fft2<T>({hr.detach(), Tensor<T>::zeros(hr.shape())}));
    const auto kh = h / scale, kw = w / scale;
    const auto r0 = h / 2 - kh / 2, c0 = w / 2 - kw / 2;
    auto re = centred.re.mutable_data();
    auto im = centred.im.mutable_data();
    for (std::size_t i = 0; i < re.size(); ++i) {
        const auto r = (i / w) % h, c = i % w;
        if (r < r0 || r >= r0 + kh || c < c0 || c >= c0 + kw) {
            re[i] = T(0);
            im[i] = T(0);
        }
    }
    return spectral::ifftshift2(centred);
}

template <typename T>
Tensor<T> degrade_kspace(const Tensor<T>& hr, std::size_t scale)
{
    NoGradScope<T> no_grad;
    if (scale == 1) {
        // Nothing is cropped, so the transform pair is the identity; skip it to
        // avoid roundoff.
        check_grid(hr, scale);
        std::vector<T> out(hr.data().begin(), hr.data().end());
        for (auto& v : out)
            v = std::clamp(std::abs(v), T(0), T(1));
        return Tensor<T>(hr.shape(), std::move(out));
    }
    auto image = spectral::ifft2(kspace_crop_spectrum(hr, scale));
    auto re = image.re.data();
    auto im = image.im.data();
    std::vector<T> out(re.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(std::hypot(re[i], im[i]), T(0), T(1));
    return Tensor<T>(hr.shape(), std::move(out));
}

template spectral::ComplexTensor<float> kspace_crop_spectrum<float>(const Tensor<float>&, std::size_t);
template spectral::ComplexTensor<double> kspace_crop_spectrum<double>(const Tensor<double>&, std::size_t);
template Tensor<float> degrade_kspace<float>(const Tensor<float>&, std::size_t);
template Tensor<double> degrade_kspace<double>(const Tensor<double>&, std::size_t);

} // namespace sscm::data
