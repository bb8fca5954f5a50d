#pragma once

#include <filesystem>

#include "core/tensor.hpp"

namespace sscm::data {

// Binary PGM (P5), maxval 255 or 65535. Values land in [0,1] as [1,H,W].
template <typename T>
Tensor<T> load_pgm(const std::filesystem::path& path);

// Clamps to [0,1] and rounds half up to the integer grid.
template <typename T>
void save_pgm(const std::filesystem::path& path, const Tensor<T>& image, unsigned maxval = 255);

} // namespace sscm::data
