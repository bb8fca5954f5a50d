#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "model/config.hpp"
#include "satab/satab.hpp"
#include "warp/dswm.hpp"

namespace sscm::model {

// Two 3x3 convolutions with GELU between.
template <typename T>
struct SpatialPath {
    Conv2d<T> conv1, conv2;

    SpatialPath() = default;
    SpatialPath(std::size_t channels, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;
};

// rfft2 -> concat(re, im) -> 1x1 conv (2C -> 2C) -> split -> irfft2.
template <typename T>
struct FrequencyPath {
    Conv2d<T> modulation;

    FrequencyPath() = default;
    FrequencyPath(std::size_t channels, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Spatial-frequency fusion: x + fuse(spatial(x) + frequency(x)).
template <typename T>
struct Sffb {
    SpatialPath<T> spatial;
    FrequencyPath<T> frequency;
    Conv2d<T> fuse; // 1x1

    Sffb() = default;
    Sffb(std::size_t channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const;
};

/// f_n = f_{n-1} + mid(B(S(f_{n-1}))). Disabled components are swapped for
/// their ablation stand-ins: window attention only for S, one 3x3 conv for B.
template <typename T>
class RestorationBlock {
public:
    RestorationBlock(const ModelConfig& cfg, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, bool training);
    Tensor<T> semantic(const Tensor<T>& x, bool training);
    Tensor<T> frequency_fusion(const Tensor<T>& x) const;
    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const;

    std::optional<satab::Satab<T>> satab;
    std::optional<satab::WindowAttentionBlock<T>> window_only;
    std::optional<Sffb<T>> sffb;
    std::optional<Conv2d<T>> plain_conv;
    Conv2d<T> mid; // zero-initialised
};

/// Full reference-guided restoration model:
/// out = tar_lr + final(f_N), with f_0 produced by the warping module.
template <typename T>
class SscmModel {
public:
    struct Diagnostics {
        warp::DisplacementField<T> displacement;
        // Per-block group map [1,H,W] (empty when grouping is disabled).
        std::vector<Tensor<T>> group_maps;
    };

    SscmModel(const ModelConfig& cfg, std::uint64_t seed);
    SscmModel(const SscmModel&) = delete;
    SscmModel& operator=(const SscmModel&) = delete;

    // Unclamped reconstruction; differentiable.
    Tensor<T> forward(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr, Diagnostics* diagnostics = nullptr);
    // Eval-mode forward clamped to [0, 1].
    Tensor<T> predict(const Tensor<T>& tar_lr, const Tensor<T>& ref_hr, Diagnostics* diagnostics = nullptr);

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }
    // Commits the EMA prototype updates queued by the last training forward.
    void apply_pending_ema();

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry<T>& params() { return registry_; }
    const ParamRegistry<T>& params() const { return registry_; }
    std::size_t param_count() const { return registry_.count(); }

    warp::Dswm<T>& dswm() { return dswm_; }
    std::vector<RestorationBlock<T>>& blocks() { return blocks_; }
    Conv2d<T>& final_conv() { return final_; }

private:
    ModelConfig cfg_;
    bool training_ = false;
    warp::Dswm<T> dswm_;
    std::vector<RestorationBlock<T>> blocks_;
    Conv2d<T> final_; // C -> 1, zero-initialised
    ParamRegistry<T> registry_;
};

// Element count of one conv layer with bias.
std::size_t conv_param_count(std::size_t in, std::size_t out, std::size_t kernel);

/// Closed-form parameter count of a configuration, per component.
struct ParamBreakdown {
    std::size_t dswm = 0;
    std::size_t satab_per_block = 0;
    std::size_t sffb_per_block = 0;
    std::size_t mid_per_block = 0;
    std::size_t final_conv = 0;
    std::size_t total = 0;
};
ParamBreakdown analytic_param_count(const ModelConfig& cfg);

} // namespace sscm::model
