#include "train/adam.hpp"

#include <cmath>

namespace sscm::train {

template <typename T>
void adam_step(ParamRegistry<T>& params, AdamState<T>& state, const AdamConfig& cfg)
{
    if (!(cfg.lr > 0))
        throw ConfigError("adam: learning rate must be positive");
    for (const auto& e : params.entries()) {
        if (!e.trainable || !e.tensor.has_grad())
            continue;
        for (T g : e.tensor.grad())
            if (!std::isfinite(g))
                throw TrainingError("non-finite gradient in parameter " + e.name);
    }

    const auto t = ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (const auto& e : params.entries()) {
        if (!e.trainable)
            continue;
        auto tensor = e.tensor;
        const auto n = tensor.numel();
        auto& m = state.m[e.name];
        auto& v = state.v[e.name];
        if (m.size() != n) {
            m.assign(n, T(0));
            v.assign(n, T(0));
        }
        auto w = tensor.mutable_data();
        const auto grad = tensor.grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
            w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
        }
    }
}

template void adam_step<float>(ParamRegistry<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ParamRegistry<double>&, AdamState<double>&, const AdamConfig&);

} // namespace sscm::train
