#include "warp/dswm.hpp"

#include <algorithm>
#include <cmath>

namespace sscm::warp {

template <typename T>
double DisplacementField<T>::max_magnitude() const
{
    const auto hw = offsets.dim(1) * offsets.dim(2);
    auto d = offsets.data();
    double mx = 0;
    for (std::size_t i = 0; i < hw; ++i)
        mx = std::max(mx, std::hypot(static_cast<double>(d[i]), static_cast<double>(d[hw + i])));
    return mx;
}

namespace {

// Bilinear stencil for one output pixel. Corner weights are zeroed when the
// corner falls outside the grid.
template <typename T>
struct Stencil {
    std::ptrdiff_t x0, y0;
    T ax, ay;
    bool in00, in01, in10, in11;
};

template <typename T>
Stencil<T> stencil_at(std::size_t y, std::size_t x, T dx, T dy, std::size_t h, std::size_t w)
{
    const T sx = static_cast<T>(x) + dx;
    const T sy = static_cast<T>(y) + dy;
    const T fx = std::floor(sx), fy = std::floor(sy);
    Stencil<T> s{static_cast<std::ptrdiff_t>(fx), static_cast<std::ptrdiff_t>(fy), sx - fx, sy - fy};
    const auto W = static_cast<std::ptrdiff_t>(w), H = static_cast<std::ptrdiff_t>(h);
    const bool x0ok = s.x0 >= 0 && s.x0 < W, x1ok = s.x0 + 1 >= 0 && s.x0 + 1 < W;
    const bool y0ok = s.y0 >= 0 && s.y0 < H, y1ok = s.y0 + 1 >= 0 && s.y0 + 1 < H;
    s.in00 = y0ok && x0ok;
    s.in01 = y0ok && x1ok;
    s.in10 = y1ok && x0ok;
    s.in11 = y1ok && x1ok;
    return s;
}

} // namespace

template <typename T>
Tensor<T> bilinear_warp(const Tensor<T>& features, const Tensor<T>& displacement)
{
    if (features.ndim() != 3 || displacement.ndim() != 3 || displacement.dim(0) != 2 ||
        displacement.dim(1) != features.dim(1) || displacement.dim(2) != features.dim(2))
        throw ShapeError("bilinear_warp: features " + shape_str(features.shape()) + " vs displacement " +
                         shape_str(displacement.shape()));
    const auto c = features.dim(0), h = features.dim(1), w = features.dim(2), hw = h * w;
    auto f = features.data();
    auto dp = displacement.data();
    std::vector<T> out(features.numel(), T(0));
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const auto p = y * w + x;
            const auto s = stencil_at<T>(y, x, dp[p], dp[hw + p], h, w);
            const T w00 = (T(1) - s.ay) * (T(1) - s.ax), w01 = (T(1) - s.ay) * s.ax;
            const T w10 = s.ay * (T(1) - s.ax), w11 = s.ay * s.ax;
            const auto i00 = s.y0 * static_cast<std::ptrdiff_t>(w) + s.x0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* plane = f.data() + ch * hw;
                T v = 0;
                if (s.in00)
                    v += w00 * plane[i00];
                if (s.in01)
                    v += w01 * plane[i00 + 1];
                if (s.in10)
                    v += w10 * plane[i00 + static_cast<std::ptrdiff_t>(w)];
                if (s.in11)
                    v += w11 * plane[i00 + static_cast<std::ptrdiff_t>(w) + 1];
                out[ch * hw + p] = v;
            }
        }
    }
    const bool rec = detail::should_record<T>({&features, &displacement});
    Tensor<T> y(features.shape(), std::move(out), rec);
    detail::debug_check_finite<T>("bilinear_warp", {&features, &displacement}, y);
    if (rec) {
        active_tape<T>()->record("bilinear_warp", [fn = features.node(), dn = displacement.node(), yn = y.node(), c,
                                                   h, w, hw] {
            if (yn->grad.empty())
                return;
            T* gf = fn->requires_grad ? fn->ensure_grad().data() : nullptr;
            T* gd = dn->requires_grad ? dn->ensure_grad().data() : nullptr;
            const auto& gy = yn->grad;
            const auto& f = fn->data;
            const auto& dp = dn->data;
            const auto W = static_cast<std::ptrdiff_t>(w);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const auto p = y * w + x;
                    const auto s = stencil_at<T>(y, x, dp[p], dp[hw + p], h, w);
                    const auto i00 = s.y0 * W + s.x0;
                    T gdx = 0, gdy = 0;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const T g = gy[ch * hw + p];
                        const T* plane = f.data() + ch * hw;
                        const T f00 = s.in00 ? plane[i00] : T(0);
                        const T f01 = s.in01 ? plane[i00 + 1] : T(0);
                        const T f10 = s.in10 ? plane[i00 + W] : T(0);
                        const T f11 = s.in11 ? plane[i00 + W + 1] : T(0);
                        gdx += g * ((T(1) - s.ay) * (f01 - f00) + s.ay * (f11 - f10));
                        gdy += g * ((T(1) - s.ax) * (f10 - f00) + s.ax * (f11 - f01));
                        if (gf) {
                            T* gplane = gf + ch * hw;
                            if (s.in00)
                                gplane[i00] += g * (T(1) - s.ay) * (T(1) - s.ax);
                            if (s.in01)
                                gplane[i00 + 1] += g * (T(1) - s.ay) * s.ax;
                            if (s.in10)
                                gplane[i00 + W] += g * s.ay * (T(1) - s.ax);
                            if (s.in11)
                                gplane[i00 + W + 1] += g * s.ay * s.ax;
                        }
                    }
                    if (gd) {
                        gd[p] += gdx;
                        gd[hw + p] += gdy;
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Dswm<T>::Dswm(std::size_t channels, bool use_warp, Rng& rng) : channels_(channels), use_warp_(use_warp)
{
    params_.tar_extract1 = Conv2d<T>(1, channels, 3, rng);
    params_.tar_extract2 = Conv2d<T>(channels, channels, 3, rng);
    params_.ref_extract1 = Conv2d<T>(1, channels, 3, rng);
    params_.ref_extract2 = Conv2d<T>(channels, channels, 3, rng);
    if (use_warp) {
        params_.predict1 = Conv2d<T>(2 * channels, channels, 3, rng);
        params_.predict2 = Conv2d<T>(channels, channels, 3, rng);
        // Zero-initialised so the untrained module is an identity warp.
        params_.predict3 = Conv2d<T>(channels, 2, 3, rng, /*zero_init=*/true);
    }
    params_.fuse = Conv2d<T>(2 * channels, channels, 1, rng);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Dswm<T>::extract_features(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr) const
{
    if (tar_lr.shape() != ref_hr.shape() || tar_lr.ndim() != 3 || tar_lr.dim(0) != 1)
        throw ShapeError("extract_features: expected matching [1,H,W] images, got " + shape_str(tar_lr.shape()) +
                         " and " + shape_str(ref_hr.shape()));
    const auto& p = params_;
    return {p.tar_extract2(gelu(p.tar_extract1(tar_lr))), p.ref_extract2(gelu(p.ref_extract1(ref_hr)))};
}

template <typename T>
DisplacementField<T> Dswm<T>::predict_displacement(const Tensor<T>& f_tar, const Tensor<T>& f_ref) const
{
    detail::check_same_shape(f_tar, f_ref, "predict_displacement");
    if (!use_warp_)
        return {Tensor<T>::zeros({2, f_tar.dim(1), f_tar.dim(2)})};
    const auto& p = params_;
    auto h = gelu(p.predict1(concat<T>({f_tar, f_ref})));
    h = gelu(p.predict2(h));
    return {p.predict3(h)};
}

template <typename T>
Tensor<T> Dswm<T>::fuse(const Tensor<T>& f_tar, const Tensor<T>& f_ref_aligned) const
{
    detail::check_same_shape(f_tar, f_ref_aligned, "fuse");
    return params_.fuse(concat<T>({f_tar, f_ref_aligned}));
}

template <typename T>
typename Dswm<T>::Output Dswm<T>::forward(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr) const
{
    auto [f_tar, f_ref] = extract_features(tar_lr, ref_hr);
    auto displacement = predict_displacement(f_tar, f_ref);
    auto aligned = use_warp_ ? bilinear_warp(f_ref, displacement.offsets) : f_ref;
    return {fuse(f_tar, aligned), std::move(displacement)};
}

template <typename T>
void Dswm<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) const
{
    params_.tar_extract1.register_params(reg, prefix + ".tar_extract.0");
    params_.tar_extract2.register_params(reg, prefix + ".tar_extract.1");
    params_.ref_extract1.register_params(reg, prefix + ".ref_extract.0");
    params_.ref_extract2.register_params(reg, prefix + ".ref_extract.1");
    if (use_warp_) {
        params_.predict1.register_params(reg, prefix + ".predictor.0");
        params_.predict2.register_params(reg, prefix + ".predictor.1");
        params_.predict3.register_params(reg, prefix + ".predictor.2");
    }
    params_.fuse.register_params(reg, prefix + ".fuse");
}

template struct DisplacementField<float>;
template struct DisplacementField<double>;
template Tensor<float> bilinear_warp<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bilinear_warp<double>(const Tensor<double>&, const Tensor<double>&);
template class Dswm<float>;
template class Dswm<double>;

} // namespace sscm::warp
