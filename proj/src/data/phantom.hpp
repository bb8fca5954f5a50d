#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace sscm::data {

template <typename T>
struct ImagePair {
    Tensor<T> tar_hr; // [1,H,W] in [0,1]
    Tensor<T> ref_hr; // [1,H,W] in [0,1]
    Tensor<T> tar_lr; // [1,H,W], zero-padded reconstruction grid
    std::size_t scale = 1;
};

/// Synthetic two-contrast scene: ellipses sharing one geometry, rendered with
/// a per-contrast intensity for each tissue class. The first ellipse is a
/// large "head" outline; later ones are smaller inclusions.
struct PhantomSpec {
    std::uint64_t seed = 0;
    std::size_t size = 64;
    std::size_t min_ellipses = 4;
    std::size_t max_ellipses = 8;
    std::vector<double> target_intensity{0.55, 0.95, 0.25, 0.75};
    std::vector<double> reference_intensity{0.35, 0.15, 0.85, 0.6};
    // Rigid shift of the reference content in pixels (x, y).
    std::array<double, 2> offset{0.0, 0.0};
    std::size_t scale = 4;
};

template <typename T>
ImagePair<T> generate_phantom_pair(const PhantomSpec& spec);

// `count` pairs with seeds spec.seed, spec.seed + 1, ...
template <typename T>
std::vector<ImagePair<T>> generate_phantom_set(const PhantomSpec& spec, std::size_t count);

} // namespace sscm::data
