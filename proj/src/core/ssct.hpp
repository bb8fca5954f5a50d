#pragma once

#include <filesystem>
#include <iosfwd>

#include "core/tensor.hpp"

// SSCT tensor blob: "SSCT", version u8 = 1, dtype u8 (0 f32, 1 f64), ndim u8,
// ndim x u32 extents, then row-major scalars; all little-endian.

namespace sscm {

template <typename T>
void write_ssct(std::ostream& os, const Tensor<T>& t);

// Reads a blob of either dtype and converts to T.
template <typename T>
Tensor<T> read_ssct(std::istream& is);

// Stored dtype of the next blob in `is` without consuming it.
DType peek_ssct_dtype(std::istream& is);

template <typename T>
void save_ssct(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_ssct(const std::filesystem::path& path);

} // namespace sscm
