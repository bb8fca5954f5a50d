#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/nn.hpp"

namespace sscm::train {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moments keyed by parameter name so they survive a checkpoint roundtrip.
template <typename T>
struct AdamState {
    std::size_t step = 0;
    std::map<std::string, std::vector<T>> m, v;
};

/// One bias-corrected Adam update of every trainable registry entry. A
/// parameter that received no gradient is treated as having a zero gradient.
/// Throws TrainingError naming the first parameter with a non-finite gradient;
/// in that case nothing is modified.
template <typename T>
void adam_step(ParamRegistry<T>& params, AdamState<T>& state, const AdamConfig& cfg);

} // namespace sscm::train
