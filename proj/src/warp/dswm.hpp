#pragma once

#include <utility>

#include "core/nn.hpp"

namespace sscm::warp {

/// Per-pixel offsets [2,H,W] in pixels, sampled on the target grid. Channel 0
/// is horizontal (x), channel 1 vertical (y).
template <typename T>
struct DisplacementField {
    Tensor<T> offsets;

    double max_magnitude() const;
};

/// Differentiable bilinear resampling of `features` [C,H,W]:
/// out(c,y,x) = features(c, y + dp1(y,x), x + dp0(y,x)), zeros outside the grid.
/// Gradients flow to both the features and the displacement.
template <typename T>
Tensor<T> bilinear_warp(const Tensor<T>& features, const Tensor<T>& displacement);

template <typename T>
struct DswmParams {
    Conv2d<T> tar_extract1, tar_extract2;
    Conv2d<T> ref_extract1, ref_extract2;
    // Displacement predictor; empty when warping is disabled.
    Conv2d<T> predict1, predict2, predict3;
    Conv2d<T> fuse; // 1x1, 2C -> C
};

/// Dynamic spatial warping: shallow features for both contrasts, a dense
/// displacement predicted from them, bilinear alignment of the reference
/// features and a 1x1 fusion into the restoration input.
template <typename T>
class Dswm {
public:
    struct Output {
        Tensor<T> features; // f_in [C,H,W]
        DisplacementField<T> displacement;
    };

    // With `use_warp` false the predictor is not built and the displacement is
    // identically zero.
    Dswm(std::size_t channels, bool use_warp, Rng& rng);

    std::pair<Tensor<T>, Tensor<T>> extract_features(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr) const;
    DisplacementField<T> predict_displacement(const Tensor<T>& f_tar, const Tensor<T>& f_ref) const;
    Tensor<T> fuse(const Tensor<T>& f_tar, const Tensor<T>& f_ref_aligned) const;
    Output forward(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr) const;

    bool warp_enabled() const { return use_warp_; }
    std::size_t channels() const { return channels_; }
    DswmParams<T>& params() { return params_; }
    const DswmParams<T>& params() const { return params_; }
    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const;

private:
    std::size_t channels_;
    bool use_warp_;
    DswmParams<T> params_;
};

} // namespace sscm::warp
