#pragma once

#include <limits>
#include <string>

#include "core/tensor.hpp"

namespace sscm::data {

// Returned by psnr() when the images are identical.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

template <typename T>
double mse(const Tensor<T>& x, const Tensor<T>& y);

// 10 log10(max_val^2 / MSE); +inf when MSE is zero.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double max_val = 1.0);

// Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1.
// Windows are truncated at the border and renormalised.
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y);

// sqrt(mean((x - y)^2)) * 100.
template <typename T>
double rmse(const Tensor<T>& x, const Tensor<T>& y);

struct MetricRow {
    double psnr_db = 0;
    double ssim = 0;
    double rmse = 0;
};

/// Metrics after dividing prediction and ground truth by the ground-truth
/// maximum and clamping the prediction to [0, 1].
template <typename T>
MetricRow evaluate_pair(const Tensor<T>& pred, const Tensor<T>& gt);

// "inf" for the infinite PSNR sentinel, fixed precision otherwise.
std::string format_metric(double value, int precision = 6);

} // namespace sscm::data
