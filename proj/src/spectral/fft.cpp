#include "spectral/fft.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

#include "core/ops.hpp"

namespace sscm::spectral {

bool is_power_of_two(std::size_t n)
{
    return n != 0 && (n & (n - 1)) == 0;
}

namespace {

template <typename T>
struct Plan {
    std::vector<std::size_t> bitrev;
    std::vector<std::complex<T>> twiddle; // exp(-2*pi*i*j/n), j < n/2

    explicit Plan(std::size_t n) : bitrev(n), twiddle(n / 2)
    {
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n)
            ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b))
                    r |= std::size_t{1} << (bits - 1 - b);
            bitrev[i] = r;
        }
        for (std::size_t j = 0; j < n / 2; ++j) {
            const long double angle = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(j) /
                                      static_cast<long double>(n);
            twiddle[j] = {static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle))};
        }
    }
};

template <typename T>
const Plan<T>& plan_for(std::size_t n)
{
    thread_local std::unordered_map<std::size_t, Plan<T>> cache;
    auto it = cache.find(n);
    if (it == cache.end())
        it = cache.emplace(n, Plan<T>(n)).first;
    return it->second;
}

void require_power_of_two(std::size_t h, std::size_t w)
{
    if (!is_power_of_two(h) || !is_power_of_two(w))
        throw UnsupportedSizeError("FFT extent " + std::to_string(h) + "x" + std::to_string(w) +
                                   " is not a power of two; zero-pad the input first");
}

struct Layout {
    std::size_t batch, h, w;
};

Layout planes_of(const Shape& shape)
{
    if (shape.size() < 2)
        throw ShapeError("spectral op needs rank >= 2, got " + shape_str(shape));
    const auto h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    return {shape_numel(shape) / (h * w), h, w};
}

// Batched unnormalised 2-D transform of the planes in `buf`.
template <typename T>
void transform_planes(std::vector<std::complex<T>>& buf, const Layout& l, bool inverse)
{
    for (std::size_t b = 0; b < l.batch; ++b)
        fft2d_inplace<T>(std::span(buf).subspan(b * l.h * l.w, l.h * l.w), l.h, l.w, inverse);
}

template <typename T>
void split(const std::vector<std::complex<T>>& buf, std::vector<T>& re, std::vector<T>& im)
{
    re.resize(buf.size());
    im.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        re[i] = buf[i].real();
        im[i] = buf[i].imag();
    }
}

} // namespace

template <typename T>
void fft1d_inplace(std::span<std::complex<T>> data, bool inverse)
{
    const std::size_t n = data.size();
    if (!is_power_of_two(n))
        throw UnsupportedSizeError("FFT length " + std::to_string(n) + " is not a power of two");
    if (n == 1)
        return;
    const auto& plan = plan_for<T>(n);
    for (std::size_t i = 0; i < n; ++i)
        if (i < plan.bitrev[i])
            std::swap(data[i], data[plan.bitrev[i]]);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t j = 0; j < half; ++j) {
                std::complex<T> tw = plan.twiddle[j * step];
                if (inverse)
                    tw = std::conj(tw);
                const std::complex<T> u = data[start + j];
                const std::complex<T> v = data[start + j + half] * tw;
                data[start + j] = u + v;
                data[start + j + half] = u - v;
            }
        }
    }
}

template <typename T>
void fft2d_inplace(std::span<std::complex<T>> data, std::size_t height, std::size_t width, bool inverse)
{
    require_power_of_two(height, width);
    if (data.size() != height * width)
        throw ShapeError("fft2d_inplace: buffer size does not match extents");
    for (std::size_t r = 0; r < height; ++r)
        fft1d_inplace<T>(data.subspan(r * width, width), inverse);
    std::vector<std::complex<T>> column(height);
    for (std::size_t c = 0; c < width; ++c) {
        for (std::size_t r = 0; r < height; ++r)
            column[r] = data[r * width + c];
        fft1d_inplace<T>(column, inverse);
        for (std::size_t r = 0; r < height; ++r)
            data[r * width + c] = column[r];
    }
}

template <typename T>
std::vector<std::complex<T>> naive_dft2(std::span<const std::complex<T>> data, std::size_t height, std::size_t width,
                                        bool inverse)
{
    if (data.size() != height * width)
        throw ShapeError("naive_dft2: buffer size does not match extents");
    const long double sign = inverse ? 1.0L : -1.0L;
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    std::vector<std::complex<T>> out(data.size());
    for (std::size_t u = 0; u < height; ++u) {
        for (std::size_t v = 0; v < width; ++v) {
            std::complex<long double> acc = 0;
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    // Reduce the phase index exactly before converting to an angle.
                    const auto k = ((u * y) % height) * width + ((v * x) % width) * height;
                    const long double angle = sign * two_pi * static_cast<long double>(k % (height * width)) /
                                              static_cast<long double>(height * width);
                    const auto& s = data[y * width + x];
                    acc += std::complex<long double>(s.real(), s.imag()) *
                           std::complex<long double>(std::cos(angle), std::sin(angle));
                }
            }
            out[u * width + v] = {static_cast<T>(acc.real()), static_cast<T>(acc.imag())};
        }
    }
    return out;
}

template <typename T>
std::vector<std::complex<T>> to_complex(const ComplexTensor<T>& x)
{
    detail::check_same_shape(x.re, x.im, "complex tensor");
    std::vector<std::complex<T>> out(x.re.numel());
    auto re = x.re.data();
    auto im = x.im.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = {re[i], im[i]};
    return out;
}

template <typename T>
ComplexTensor<T> from_complex(const Shape& shape, std::span<const std::complex<T>> values)
{
    std::vector<T> re, im;
    split(std::vector<std::complex<T>>(values.begin(), values.end()), re, im);
    return {Tensor<T>(shape, std::move(re)), Tensor<T>(shape, std::move(im))};
}

namespace {

// Shared body of fft2/ifft2: y = norm * F_dir(x). The adjoint of F_dir is
// F_{!dir}, so the gradient is norm * F_{!dir}(dy).
template <typename T>
ComplexTensor<T> complex_transform(const ComplexTensor<T>& x, bool inverse, const char* name)
{
    detail::check_same_shape(x.re, x.im, name);
    const Layout l = planes_of(x.shape());
    require_power_of_two(l.h, l.w);
    const T norm = inverse ? T(1) / static_cast<T>(l.h * l.w) : T(1);
    auto buf = to_complex(x);
    transform_planes(buf, l, inverse);
    if (inverse)
        for (auto& z : buf)
            z *= norm;
    std::vector<T> re, im;
    split(buf, re, im);
    const bool rec = detail::should_record<T>({&x.re, &x.im});
    ComplexTensor<T> y{Tensor<T>(x.shape(), std::move(re), rec), Tensor<T>(x.shape(), std::move(im), rec)};
    if (rec) {
        active_tape<T>()->record(name, [xr = x.re.node(), xi = x.im.node(), yr = y.re.node(), yi = y.im.node(), l,
                                        inverse, norm] {
            if (yr->grad.empty() && yi->grad.empty())
                return;
            std::vector<std::complex<T>> g(yr->data.size());
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] = {yr->grad.empty() ? T(0) : yr->grad[i], yi->grad.empty() ? T(0) : yi->grad[i]};
            transform_planes(g, l, !inverse);
            if (xr->requires_grad) {
                auto& gr = xr->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gr[i] += norm * g[i].real();
            }
            if (xi->requires_grad) {
                auto& gi = xi->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gi[i] += norm * g[i].imag();
            }
        });
    }
    return y;
}

} // namespace

template <typename T>
ComplexTensor<T> fft2(const ComplexTensor<T>& x)
{
    return complex_transform(x, false, "fft2");
}

template <typename T>
ComplexTensor<T> ifft2(const ComplexTensor<T>& x)
{
    return complex_transform(x, true, "ifft2");
}

template <typename T>
ComplexTensor<T> rfft2(const Tensor<T>& x)
{
    const Layout l = planes_of(x.shape());
    require_power_of_two(l.h, l.w);
    const std::size_t half = l.w / 2 + 1;
    std::vector<std::complex<T>> buf(x.numel());
    auto src = x.data();
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = {src[i], T(0)};
    transform_planes(buf, l, false);
    std::vector<T> re(l.batch * l.h * half), im(l.batch * l.h * half);
    for (std::size_t p = 0; p < l.batch * l.h; ++p) {
        for (std::size_t v = 0; v < half; ++v) {
            re[p * half + v] = buf[p * l.w + v].real();
            im[p * half + v] = buf[p * l.w + v].imag();
        }
    }
    Shape out_shape = x.shape();
    out_shape.back() = half;
    const bool rec = detail::should_record<T>({&x});
    ComplexTensor<T> y{Tensor<T>(out_shape, std::move(re), rec), Tensor<T>(out_shape, std::move(im), rec)};
    if (rec) {
        active_tape<T>()->record("rfft2", [xn = x.node(), yr = y.re.node(), yi = y.im.node(), l, half] {
            if ((yr->grad.empty() && yi->grad.empty()) || !xn->requires_grad)
                return;
            // dx = Re(F^H G), with G zero outside the kept half spectrum.
            std::vector<std::complex<T>> g(l.batch * l.h * l.w, std::complex<T>(0));
            for (std::size_t p = 0; p < l.batch * l.h; ++p)
                for (std::size_t v = 0; v < half; ++v)
                    g[p * l.w + v] = {yr->grad.empty() ? T(0) : yr->grad[p * half + v],
                                      yi->grad.empty() ? T(0) : yi->grad[p * half + v]};
            transform_planes(g, l, true);
            auto& gx = xn->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += g[i].real();
        });
    }
    return y;
}

template <typename T>
Tensor<T> irfft2(const ComplexTensor<T>& x, std::size_t width)
{
    detail::check_same_shape(x.re, x.im, "irfft2");
    const std::size_t half = width / 2 + 1;
    if (x.shape().back() != half)
        throw ShapeError("irfft2: last extent " + std::to_string(x.shape().back()) + " does not match width " +
                         std::to_string(width));
    Shape out_shape = x.shape();
    out_shape.back() = width;
    const Layout l = planes_of(out_shape);
    require_power_of_two(l.h, l.w);
    // Hermitian multiplicity of each kept column.
    auto weight = [half, width](std::size_t v) { return (v == 0 || (width % 2 == 0 && v == half - 1)) ? T(1) : T(2); };
    const T norm = T(1) / static_cast<T>(l.h * l.w);

    std::vector<std::complex<T>> buf(l.batch * l.h * l.w, std::complex<T>(0));
    auto re = x.re.data();
    auto im = x.im.data();
    for (std::size_t p = 0; p < l.batch * l.h; ++p)
        for (std::size_t v = 0; v < half; ++v)
            buf[p * l.w + v] = weight(v) * std::complex<T>(re[p * half + v], im[p * half + v]);
    transform_planes(buf, l, true);
    std::vector<T> out(buf.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = buf[i].real() * norm;

    const bool rec = detail::should_record<T>({&x.re, &x.im});
    Tensor<T> y(out_shape, std::move(out), rec);
    if (rec) {
        active_tape<T>()->record("irfft2", [xr = x.re.node(), xi = x.im.node(), yn = y.node(), l, half, weight,
                                            norm] {
            if (yn->grad.empty())
                return;
            std::vector<std::complex<T>> g(yn->grad.size());
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] = {yn->grad[i], T(0)};
            transform_planes(g, l, false);
            for (std::size_t p = 0; p < l.batch * l.h; ++p) {
                for (std::size_t v = 0; v < half; ++v) {
                    const T c = weight(v) * norm;
                    if (xr->requires_grad)
                        xr->ensure_grad()[p * half + v] += c * g[p * l.w + v].real();
                    if (xi->requires_grad)
                        xi->ensure_grad()[p * half + v] += c * g[p * l.w + v].imag();
                }
            }
        });
    }
    return y;
}

template <typename T>
ComplexTensor<T> fftshift2(const ComplexTensor<T>& x)
{
    const Layout l = planes_of(x.shape());
    const auto sh = static_cast<std::int64_t>(l.h / 2), sw = static_cast<std::int64_t>(l.w / 2);
    return {roll2(x.re, sh, sw), roll2(x.im, sh, sw)};
}

template <typename T>
ComplexTensor<T> ifftshift2(const ComplexTensor<T>& x)
{
    const Layout l = planes_of(x.shape());
    const auto sh = static_cast<std::int64_t>(l.h / 2), sw = static_cast<std::int64_t>(l.w / 2);
    return {roll2(x.re, -sh, -sw), roll2(x.im, -sh, -sw)};
}

#define SSCM_INSTANTIATE_SPECTRAL(T)                                                                                   \
    template void fft1d_inplace<T>(std::span<std::complex<T>>, bool);                                                  \
    template void fft2d_inplace<T>(std::span<std::complex<T>>, std::size_t, std::size_t, bool);                        \
    template std::vector<std::complex<T>> naive_dft2<T>(std::span<const std::complex<T>>, std::size_t, std::size_t,   \
                                                        bool);                                                         \
    template ComplexTensor<T> fft2<T>(const ComplexTensor<T>&);                                                        \
    template ComplexTensor<T> ifft2<T>(const ComplexTensor<T>&);                                                       \
    template ComplexTensor<T> rfft2<T>(const Tensor<T>&);                                                              \
    template Tensor<T> irfft2<T>(const ComplexTensor<T>&, std::size_t);                                                \
    template ComplexTensor<T> fftshift2<T>(const ComplexTensor<T>&);                                                   \
    template ComplexTensor<T> ifftshift2<T>(const ComplexTensor<T>&);                                                  \
    template std::vector<std::complex<T>> to_complex<T>(const ComplexTensor<T>&);                                      \
    template ComplexTensor<T> from_complex<T>(const Shape&, std::span<const std::complex<T>>);

SSCM_INSTANTIATE_SPECTRAL(float)
SSCM_INSTANTIATE_SPECTRAL(double)

} // namespace sscm::spectral
