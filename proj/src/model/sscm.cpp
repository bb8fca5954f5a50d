#include "model/sscm.hpp"

#include <algorithm>

#include "spectral/fft.hpp"

namespace sscm::model {

template <typename T>
SpatialPath<T>::SpatialPath(std::size_t channels, Rng& rng)
    : conv1(channels, channels, 3, rng), conv2(channels, channels, 3, rng)
{
}

template <typename T>
Tensor<T> SpatialPath<T>::operator()(const Tensor<T>& x) const
{
    return conv2(gelu(conv1(x)));
}

template <typename T>
FrequencyPath<T>::FrequencyPath(std::size_t channels, Rng& rng) : modulation(2 * channels, 2 * channels, 1, rng)
{
}

template <typename T>
Tensor<T> FrequencyPath<T>::operator()(const Tensor<T>& x) const
{
    const auto c = x.dim(0), w = x.dim(2);
    auto spectrum = spectral::rfft2(x);
    auto modulated = modulation(concat<T>({spectrum.re, spectrum.im}));
    return spectral::irfft2<T>({slice(modulated, 0, c), slice(modulated, c, 2 * c)}, w);
}

template <typename T>
Sffb<T>::Sffb(std::size_t channels, Rng& rng)
    : spatial(channels, rng), frequency(channels, rng), fuse(channels, channels, 1, rng)
{
}

template <typename T>
Tensor<T> Sffb<T>::forward(const Tensor<T>& x) const
{
    return add(x, fuse(add(spatial(x), frequency(x))));
}

template <typename T>
void Sffb<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) const
{
    spatial.conv1.register_params(reg, prefix + ".spatial.0");
    spatial.conv2.register_params(reg, prefix + ".spatial.1");
    frequency.modulation.register_params(reg, prefix + ".freq");
    fuse.register_params(reg, prefix + ".fuse");
}

template <typename T>
RestorationBlock<T>::RestorationBlock(const ModelConfig& cfg, Rng& rng)
{
    const auto sc = cfg.satab_config();
    if (cfg.use_satab)
        satab.emplace(sc, rng);
    else
        window_only.emplace(sc, rng);
    if (cfg.use_sffb)
        sffb.emplace(cfg.channels, rng);
    else
        plain_conv.emplace(cfg.channels, cfg.channels, 3, rng);
    mid = Conv2d<T>(cfg.channels, cfg.channels, 3, rng, /*zero_init=*/true);
}

template <typename T>
Tensor<T> RestorationBlock<T>::semantic(const Tensor<T>& x, bool training)
{
    return satab ? satab->forward(x, training) : window_only->forward(x);
}

template <typename T>
Tensor<T> RestorationBlock<T>::frequency_fusion(const Tensor<T>& x) const
{
    return sffb ? sffb->forward(x) : (*plain_conv)(x);
}

template <typename T>
Tensor<T> RestorationBlock<T>::forward(const Tensor<T>& x, bool training)
{
    return add(x, mid(frequency_fusion(semantic(x, training))));
}

template <typename T>
void RestorationBlock<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) const
{
    if (satab)
        satab->register_params(reg, prefix + ".satab");
    else
        window_only->register_params(reg, prefix + ".window_attn");
    if (sffb)
        sffb->register_params(reg, prefix + ".sffb");
    else
        plain_conv->register_params(reg, prefix + ".conv");
    mid.register_params(reg, prefix + ".mid");
}

namespace {
ModelConfig validated(const ModelConfig& cfg)
{
    cfg.validate();
    return cfg;
}
} // namespace

template <typename T>
SscmModel<T>::SscmModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)), dswm_([&]() -> warp::Dswm<T> {
          Rng rng(seed);
          return warp::Dswm<T>(cfg.channels, cfg.use_dswm, rng);
      }())
{
    // Each component draws from its own stream so toggling one ablation flag
    // leaves the initial weights of the others unchanged.
    for (std::size_t n = 0; n < cfg_.num_blocks; ++n) {
        Rng rng(seed + 0x9E3779B97F4A7C15ULL * (n + 1));
        blocks_.emplace_back(cfg_, rng);
    }
    Rng final_rng(seed ^ 0xD1B54A32D192ED03ULL);
    final_ = Conv2d<T>(cfg_.channels, 1, 3, final_rng, /*zero_init=*/true);

    dswm_.register_params(registry_, "dswm");
    for (std::size_t n = 0; n < blocks_.size(); ++n)
        blocks_[n].register_params(registry_, "block." + std::to_string(n));
    final_.register_params(registry_, "final");
}

template <typename T>
Tensor<T> SscmModel<T>::forward(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr, Diagnostics* diagnostics)
{
    if (tar_lr.shape() != ref_hr.shape())
        throw ShapeError("sscm: target " + shape_str(tar_lr.shape()) + " and reference " + shape_str(ref_hr.shape()) +
                         " grids differ");
    if (tar_lr.shape() != Shape{1, cfg_.height, cfg_.width})
        throw ShapeError("sscm: expected [1," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                         "] input, got " + shape_str(tar_lr.shape()));
    auto front = dswm_.forward(tar_lr, ref_hr);
    auto f = front.features;
    if (diagnostics) {
        diagnostics->displacement = front.displacement;
        diagnostics->group_maps.clear();
    }
    for (auto& block : blocks_) {
        f = block.forward(f, training_);
        if (diagnostics && block.satab) {
            const auto& ids = block.satab->last_assignment().group_id;
            std::vector<T> map(ids.size());
            std::transform(ids.begin(), ids.end(), map.begin(), [](std::size_t g) { return static_cast<T>(g); });
            diagnostics->group_maps.emplace_back(Shape{1, cfg_.height, cfg_.width}, std::move(map));
        }
    }
    return add(tar_lr, final_(f));
}

template <typename T>
Tensor<T> SscmModel<T>::predict(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr, Diagnostics* diagnostics)
{
    NoGradScope<T> no_grad;
    const bool was_training = training_;
    training_ = false;
    auto out = forward(tar_lr, ref_hr, diagnostics);
    training_ = was_training;
    std::vector<T> clamped(out.data().begin(), out.data().end());
    for (auto& v : clamped)
        v = std::clamp(v, T(0), T(1));
    return Tensor<T>(out.shape(), std::move(clamped));
}

template <typename T>
void SscmModel<T>::apply_pending_ema()
{
    for (auto& block : blocks_)
        if (block.satab)
            block.satab->apply_pending_ema();
}

std::size_t conv_param_count(std::size_t in, std::size_t out, std::size_t kernel)
{
    return in * out * kernel * kernel + out;
}

ParamBreakdown analytic_param_count(const ModelConfig& cfg)
{
    const auto c = cfg.channels, e = cfg.ffn_expansion;
    ParamBreakdown b;
    b.dswm = 2 * (conv_param_count(1, c, 3) + conv_param_count(c, c, 3)) + conv_param_count(2 * c, c, 1);
    if (cfg.use_dswm)
        b.dswm += conv_param_count(2 * c, c, 3) + conv_param_count(c, c, 3) + conv_param_count(c, 2, 3);
    // Attention: three bias-free projections plus a biased output projection.
    const auto mhsa = 4 * c * c + c;
    if (cfg.use_satab)
        b.satab_per_block = 3 * mhsa + conv_param_count(2 * c, c, 1) + conv_param_count(c, e * c, 1) +
                            conv_param_count(e * c, c, 1) + cfg.prototypes * c;
    else
        b.satab_per_block = mhsa;
    if (cfg.use_sffb)
        b.sffb_per_block = 2 * conv_param_count(c, c, 3) + conv_param_count(2 * c, 2 * c, 1) + conv_param_count(c, c, 1);
    else
        b.sffb_per_block = conv_param_count(c, c, 3);
    b.mid_per_block = conv_param_count(c, c, 3);
    b.final_conv = conv_param_count(c, 1, 3);
    b.total = b.dswm + cfg.num_blocks * (b.satab_per_block + b.sffb_per_block + b.mid_per_block) + b.final_conv;
    return b;
}

template struct SpatialPath<float>;
template struct SpatialPath<double>;
template struct FrequencyPath<float>;
template struct FrequencyPath<double>;
template struct Sffb<float>;
template struct Sffb<double>;
template class RestorationBlock<float>;
template class RestorationBlock<double>;
template class SscmModel<float>;
template class SscmModel<double>;

} // namespace sscm::model
