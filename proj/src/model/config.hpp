#pragma once

#include <cstddef>
#include <string>

#include "satab/satab.hpp"

namespace sscm::model {

/// Architecture hyperparameters. Defaults are the desk-scale configuration.
struct ModelConfig {
    std::size_t channels = 32;
    std::size_t num_blocks = 2;
    std::size_t prototypes = 8;
    std::size_t sub_group = 64;
    std::size_t window = 8;
    std::size_t window_stride = 4;
    std::size_t heads = 4;
    std::size_t ffn_expansion = 2;
    bool use_dswm = true;
    bool use_satab = true;
    bool use_sffb = true;
    std::size_t height = 64;
    std::size_t width = 64;
    double ema_decay = 0.99;

    // Throws ConfigError on the first violated invariant.
    void validate() const;
    satab::SatabConfig satab_config() const;

    bool operator==(const ModelConfig&) const = default;
};

// Named presets: "desk" (default), "tiny" (8x8 gradcheck scale) and "paper",
// a larger configuration for parameter-count comparisons only.
ModelConfig preset(const std::string& name);

} // namespace sscm::model
