#include "data/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <vector>

namespace sscm::data {

namespace {

template <typename T>
void check_pair(const Tensor<T>& x, const Tensor<T>& y, const char* metric)
{
    if (x.shape() != y.shape())
        throw ShapeError(std::string(metric) + ": shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
}

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps()
{
    std::array<double, kWindow> taps{};
    const int r = static_cast<int>(kWindow / 2);
    for (int i = -r; i <= r; ++i)
        taps[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
    return taps;
}

// Separable Gaussian mean over the in-bounds part of each window.
std::vector<double> local_mean(const std::vector<double>& img, std::size_t h, std::size_t w)
{
    static const auto taps = gaussian_taps();
    const auto r = static_cast<std::ptrdiff_t>(kWindow / 2);
    std::vector<double> tmp(h * w), out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0, norm = 0;
            for (std::ptrdiff_t k = -r; k <= r; ++k) {
                const auto xx = static_cast<std::ptrdiff_t>(x) + k;
                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w))
                    continue;
                const double t = taps[static_cast<std::size_t>(k + r)];
                acc += t * img[y * w + static_cast<std::size_t>(xx)];
                norm += t;
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0, norm = 0;
            for (std::ptrdiff_t k = -r; k <= r; ++k) {
                const auto yy = static_cast<std::ptrdiff_t>(y) + k;
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h))
                    continue;
                const double t = taps[static_cast<std::size_t>(k + r)];
                acc += t * tmp[static_cast<std::size_t>(yy) * w + x];
                norm += t;
            }
            out[y * w + x] = acc / norm;
        }
    }
    return out;
}

} // namespace

template <typename T>
double mse(const Tensor<T>& x, const Tensor<T>& y)
{
    check_pair(x, y, "mse");
    auto a = x.data();
    auto b = y.data();
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double max_val)
{
    if (!(max_val > 0))
        throw ConfigError("psnr: max_val must be positive");
    const double m = mse(x, y);
    if (m == 0)
        return kInfinitePsnr;
    return 10.0 * std::log10(max_val * max_val / m);
}

template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y)
{
    check_pair(x, y, "ssim");
    if (x.ndim() < 2)
        throw ShapeError("ssim: expected an image");
    const auto h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
    if (h < kWindow || w < kWindow)
        throw ConfigError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " +
                          std::to_string(kWindow) + "x" + std::to_string(kWindow) + " window");
    const auto planes = x.numel() / (h * w);
    constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    double total = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        std::vector<double> a(h * w), b(h * w), aa(h * w), bb(h * w), ab(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            a[i] = static_cast<double>(x.data()[p * h * w + i]);
            b[i] = static_cast<double>(y.data()[p * h * w + i]);
            aa[i] = a[i] * a[i];
            bb[i] = b[i] * b[i];
            ab[i] = a[i] * b[i];
        }
        const auto mu_a = local_mean(a, h, w), mu_b = local_mean(b, h, w);
        const auto e_aa = local_mean(aa, h, w), e_bb = local_mean(bb, h, w), e_ab = local_mean(ab, h, w);
        for (std::size_t i = 0; i < h * w; ++i) {
            const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
            const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
            const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
            total += num / den;
        }
    }
    return total / static_cast<double>(planes * h * w);
}

template <typename T>
double rmse(const Tensor<T>& x, const Tensor<T>& y)
{
    return std::sqrt(mse(x, y)) * 100.0;
}

template <typename T>
MetricRow evaluate_pair(const Tensor<T>& pred, const Tensor<T>& gt)
{
    check_pair(pred, gt, "evaluate");
    double peak = 0;
    for (T v : gt.data())
        peak = std::max(peak, static_cast<double>(v));
    const double inv = peak > 0 ? 1.0 / peak : 1.0;
    std::vector<double> p(pred.numel()), g(gt.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::clamp(static_cast<double>(pred.data()[i]), 0.0, 1.0) * inv;
        g[i] = static_cast<double>(gt.data()[i]) * inv;
    }
    const Tensor<double> pt(pred.shape(), std::move(p)), gtt(gt.shape(), std::move(g));
    return {psnr(pt, gtt), ssim(pt, gtt), rmse(pt, gtt)};
}

std::string format_metric(double value, int precision)
{
    if (std::isinf(value))
        return value > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, value);
    return buf;
}

#define SSCM_INSTANTIATE_METRICS(T)                                                                                    \
    template double mse<T>(const Tensor<T>&, const Tensor<T>&);                                                        \
    template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double);                                               \
    template double ssim<T>(const Tensor<T>&, const Tensor<T>&);                                                       \
    template double rmse<T>(const Tensor<T>&, const Tensor<T>&);                                                       \
    template MetricRow evaluate_pair<T>(const Tensor<T>&, const Tensor<T>&);

SSCM_INSTANTIATE_METRICS(float)
SSCM_INSTANTIATE_METRICS(double)

} // namespace sscm::data
