#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/ops.hpp"
#include "core/random.hpp"

namespace sscm {

/// Ordered name -> tensor table covering every learnable tensor and buffer of
/// a model. Names are canonical dotted paths such as `block.0.sffb.freq.weight`.
template <typename T>
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable;
    };

    void add(std::string name, Tensor<T> tensor, bool trainable = true)
    {
        for (const auto& e : entries_) {
            if (e.name == name)
                throw ContractError("duplicate parameter name " + name);
            if (e.tensor.node() == tensor.node())
                throw ContractError("tensor registered twice: " + e.name + " and " + name);
        }
        tensor.set_requires_grad(trainable);
        entries_.push_back({std::move(name), std::move(tensor), trainable});
    }

    const std::vector<Entry>& entries() const { return entries_; }

    const Entry* find(const std::string& name) const
    {
        for (const auto& e : entries_)
            if (e.name == name)
                return &e;
        return nullptr;
    }

    // Element count of every registered tensor, buffers included.
    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            n += e.tensor.numel();
        return n;
    }

    void zero_grad()
    {
        for (auto& e : entries_)
            e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
};

namespace detail {
template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng)
{
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v)
        x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v));
}
} // namespace detail

// "Same"-padded 2-D convolution with odd square kernel.
template <typename T>
struct Conv2d {
    Tensor<T> weight; // [out, in, k, k]
    Tensor<T> bias;   // [out]

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, bool zero_init = false)
    {
        const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
        weight = detail::uniform_tensor<T>({out, in, kernel, kernel}, bound, rng);
        bias = detail::uniform_tensor<T>({out}, bound, rng);
    }

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t kernel() const { return weight.dim(2); }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, 1, kernel() / 2); }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const
    {
        reg.add(prefix + ".weight", weight);
        reg.add(prefix + ".bias", bias);
    }
};

// Row-wise affine map on token matrices [N, in] -> [N, out].
template <typename T>
struct Linear {
    Tensor<T> weight; // [in, out]
    Tensor<T> bias;   // [out], optional

    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        weight = detail::uniform_tensor<T>({in, out}, bound, rng);
        if (with_bias)
            bias = detail::uniform_tensor<T>({out}, bound, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const
    {
        reg.add(prefix + ".weight", weight);
        if (bias.defined())
            reg.add(prefix + ".bias", bias);
    }
};

} // namespace sscm
