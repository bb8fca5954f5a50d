#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <numeric>

#include "core/ops.hpp"
#include "spectral/fft.hpp"
#include "train/gradcheck.hpp"
#include "test_util.hpp"

using namespace sscm;
using namespace sscm::spectral;
using testutil::max_abs_diff;
using testutil::random_tensor;
using cd = std::complex<double>;

namespace {

ComplexTensor<double> random_complex(Rng& rng, Shape shape)
{
    return {random_tensor<double>(rng, shape), random_tensor<double>(rng, shape)};
}

double max_diff(const ComplexTensor<double>& a, const ComplexTensor<double>& b)
{
    return std::max(max_abs_diff(a.re.data(), b.re.data()), max_abs_diff(a.im.data(), b.im.data()));
}

// <a, b> = sum re(a conj b) over the real pairing of (re, im) vectors.
double inner(const ComplexTensor<double>& a, const ComplexTensor<double>& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.re.numel(); ++i)
        s += a.re.data()[i] * b.re.data()[i] + a.im.data()[i] * b.im.data()[i];
    return s;
}

} // namespace

TEST_CASE("power of two detection")
{
    CHECK(is_power_of_two(1));
    CHECK(is_power_of_two(64));
    CHECK_FALSE(is_power_of_two(0));
    CHECK_FALSE(is_power_of_two(12));
}

TEST_CASE("fft2 matches the naive DFT")
{
    Rng rng(1);
    for (auto [h, w] : {std::pair{1, 1}, {2, 8}, {8, 8}, {16, 4}, {16, 16}}) {
        auto x = random_complex(rng, {std::size_t(h), std::size_t(w)});
        const auto fast = fft2(x);
        const auto ref = naive_dft2<double>(to_complex(x), h, w, false);
        CHECK(max_diff(fast, from_complex<double>(x.shape(), ref)) <= 1e-10);
    }
}

TEST_CASE("naive DFT of a constant puts everything in DC")
{
    std::vector<cd> c(6 * 5, cd(0.7, 0));
    const auto X = naive_dft2<double>(c, 6, 5, false);
    CHECK(std::abs(X[0] - cd(0.7 * 30, 0)) < 1e-12);
    for (std::size_t i = 1; i < X.size(); ++i)
        CHECK(std::abs(X[i]) < 1e-12);
}

TEST_CASE("fft2 of a constant image")
{
    const double c = 0.3;
    ComplexTensor<double> x{Tensor<double>::full({4, 8}, c), Tensor<double>::zeros({4, 8})};
    const auto X = fft2(x);
    CHECK(std::abs(X.re.data()[0] - c * 32) < 1e-12);
    for (std::size_t i = 1; i < 32; ++i) {
        CHECK(std::abs(X.re.data()[i]) < 1e-12);
        CHECK(std::abs(X.im.data()[i]) < 1e-12);
    }
}

TEST_CASE("non power of two extents are rejected")
{
    ComplexTensor<double> x{Tensor<double>::zeros({6, 8}), Tensor<double>::zeros({6, 8})};
    CHECK_THROWS_AS(fft2(x), UnsupportedSizeError);
    CHECK_THROWS_AS(rfft2(Tensor<double>::zeros({1, 8, 12})), UnsupportedSizeError);
}

TEST_CASE("inverse, Parseval and linearity")
{
    Rng rng(2);
    auto x = random_complex(rng, {2, 16, 16});
    CHECK(max_diff(ifft2(fft2(x)), x) <= 1e-10);

    auto y = random_complex(rng, {16, 16});
    const auto Y = fft2(y);
    double e_time = 0, e_freq = 0;
    for (std::size_t i = 0; i < 256; ++i) {
        e_time += y.re.data()[i] * y.re.data()[i] + y.im.data()[i] * y.im.data()[i];
        e_freq += Y.re.data()[i] * Y.re.data()[i] + Y.im.data()[i] * Y.im.data()[i];
    }
    CHECK(std::abs(e_time - e_freq / 256.0) <= 1e-10);

    auto z = random_complex(rng, {16, 16});
    const double a = 0.7, b = -1.3;
    ComplexTensor<double> mix{add(scale(y.re, a), scale(z.re, b)), add(scale(y.im, a), scale(z.im, b))};
    const auto Z = fft2(z), M = fft2(mix);
    ComplexTensor<double> lin{add(scale(Y.re, a), scale(Z.re, b)), add(scale(Y.im, a), scale(Z.im, b))};
    CHECK(max_diff(M, lin) <= 1e-10);
}

TEST_CASE("fft2 of real input is Hermitian")
{
    Rng rng(3);
    const std::size_t h = 8, w = 16;
    auto X = fft2<double>({random_tensor<double>(rng, {h, w}), Tensor<double>::zeros({h, w})});
    double worst = 0;
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            const auto i = u * w + v, j = ((h - u) % h) * w + (w - v) % w;
            worst = std::max(worst, std::abs(X.re.data()[i] - X.re.data()[j]));
            worst = std::max(worst, std::abs(X.im.data()[i] + X.im.data()[j]));
        }
    CHECK(worst <= 1e-10);
}

TEST_CASE("rfft2 equals the kept bins of fft2 and inverts")
{
    Rng rng(4);
    const std::size_t h = 8, w = 16;
    auto x = random_tensor<double>(rng, {3, h, w});
    const auto half = rfft2(x);
    CHECK(half.shape() == Shape{3, h, w / 2 + 1});
    const auto full = fft2<double>({x, Tensor<double>::zeros(x.shape())});
    double worst = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t u = 0; u < h; ++u)
            for (std::size_t v = 0; v <= w / 2; ++v) {
                worst = std::max(worst, std::abs(half.re.at({c, u, v}) - full.re.at({c, u, v})));
                worst = std::max(worst, std::abs(half.im.at({c, u, v}) - full.im.at({c, u, v})));
            }
    CHECK(worst <= 1e-10);

    auto sq = random_tensor<double>(rng, {16, 16});
    CHECK(max_abs_diff(irfft2(rfft2(sq), 16).data(), sq.data()) <= 1e-10);
    auto sqf = random_tensor<float>(rng, {2, 16, 16});
    CHECK(max_abs_diff(irfft2(rfft2(sqf), 16).data(), sqf.data()) <= 1e-5);

    const auto zero = rfft2(Tensor<double>::zeros({4, 4}));
    for (std::size_t i = 0; i < zero.re.numel(); ++i) {
        CHECK(zero.re.data()[i] == 0.0);
        CHECK(zero.im.data()[i] == 0.0);
    }
}

TEST_CASE("fftshift conventions")
{
    Rng rng(5);
    auto odd = random_complex(rng, {5, 7});
    CHECK(max_diff(ifftshift2(fftshift2(odd)), odd) == 0.0);

    std::vector<double> delta(6 * 8, 0.0);
    delta[0] = 1;
    ComplexTensor<double> d{Tensor<double>({6, 8}, delta), Tensor<double>::zeros({6, 8})};
    const auto s = fftshift2(d);
    CHECK(s.re.at({3, 4}) == 1.0);
    CHECK(std::accumulate(s.re.data().begin(), s.re.data().end(), 0.0) == 1.0);

    auto even = random_complex(rng, {4, 8});
    CHECK(max_diff(fftshift2(fftshift2(even)), even) == 0.0);
}

TEST_CASE("adjoint identities")
{
    Rng rng(6);
    // <F x, y> = <x, F^H y>, with F^H = HW * ifft2.
    auto x = random_complex(rng, {8, 16}), y = random_complex(rng, {8, 16});
    const auto Fx = fft2(x);
    auto FHy = ifft2(y);
    FHy = {scale(FHy.re, 128.0), scale(FHy.im, 128.0)};
    CHECK(std::abs(inner(Fx, y) - inner(x, FHy)) <= 1e-10);

    // rfft2 adjoint via its tape gradient: d<rfft2(x), y>/dx = rfft2^T y.
    auto xr = random_tensor<double>(rng, {8, 16}).set_requires_grad(true);
    auto yh = random_complex(rng, {8, 9});
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        const auto X = rfft2(xr);
        loss = add(sum(mul(X.re, yh.re)), sum(mul(X.im, yh.im)));
    }
    backward(loss, tape);
    double lhs = loss.item(), rhs = 0;
    for (std::size_t i = 0; i < xr.numel(); ++i)
        rhs += xr.data()[i] * xr.grad()[i];
    CHECK(std::abs(lhs - rhs) <= 1e-10);

    // Same for irfft2, which is linear in (re, im).
    auto zr = random_complex(rng, {8, 9});
    zr.re.set_requires_grad(true);
    zr.im.set_requires_grad(true);
    auto w = random_tensor<double>(rng, {8, 16});
    Tape<double> tape2;
    Tensor<double> loss2;
    {
        TapeScope<double> scope(tape2);
        loss2 = sum(mul(irfft2(zr, 16), w));
    }
    backward(loss2, tape2);
    double rhs2 = 0;
    for (std::size_t i = 0; i < zr.re.numel(); ++i)
        rhs2 += zr.re.data()[i] * zr.re.grad()[i] + zr.im.data()[i] * zr.im.grad()[i];
    CHECK(std::abs(loss2.item() - rhs2) <= 1e-10);
}

TEST_CASE("gradient of sum(re(fft2(x))) is the transform of ones")
{
    Rng rng(7);
    const std::size_t n = 4;
    auto x = random_complex(rng, {n, n});
    x.re.set_requires_grad(true);
    x.im.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        loss = sum(fft2(x).re);
    }
    backward(loss, tape);
    // d/dx_re = sum_uv cos(theta) = HW at the origin, 0 elsewhere; d/dx_im = sum_uv sin(theta) = 0.
    for (std::size_t i = 0; i < n * n; ++i) {
        CHECK(std::abs(x.re.grad()[i] - (i == 0 ? 16.0 : 0.0)) < 1e-12);
        CHECK(std::abs(x.im.grad()[i]) < 1e-12);
    }
    const auto r = train::check_gradients("sum_re_fft2", {{"re", x.re}, {"im", x.im}},
                                          [=] { return sum(fft2(x).re); }, 3);
    // The im gradient is exactly zero, so the ratio is pure difference roundoff over the floor.
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("gradcheck through rfft2, 1x1 conv, irfft2")
{
    Rng rng(8);
    auto x = random_tensor<double>(rng, {2, 4, 8});
    auto w = random_tensor<double>(rng, {4, 4, 1, 1});
    const auto r = train::check_gradients("freq_chain", {{"x", x}, {"w", w}}, [=] {
        const auto s = rfft2(x);
        const auto m = conv2d(concat<double>({s.re, s.im}), w);
        return irfft2<double>({slice(m, 0, 2), slice(m, 2, 4)}, 8);
    }, 4);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("zero upstream gradient gives zero leaf gradient")
{
    Rng rng(9);
    auto x = random_tensor<double>(rng, {4, 4}).set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        const auto s = rfft2(x);
        loss = add(sum(mul(s.re, Tensor<double>::zeros(s.shape()))), sum(mul(s.im, Tensor<double>::zeros(s.shape()))));
    }
    backward(loss, tape);
    for (double g : x.grad())
        CHECK(g == 0.0);
}
