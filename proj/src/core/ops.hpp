#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/tensor.hpp"

// Differentiable primitives. Every op records a backward rule on the active
// tape when at least one input requires a gradient; otherwise it is a plain
// forward computation.

namespace sscm {

// Elementwise. Binary ops require identical shapes (no broadcasting).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Row-wise affine map: x [N,in], weight [in,out], optional bias [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Numerically stable softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// x [C_in,H,W], weight [C_out,C_in,kh,kw], optional bias [C_out]; zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}, std::size_t stride = 1,
                 std::size_t pad = 0);

// Same data, new extents (element count must match).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x);

// Concatenation / slicing along the leading axis.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end);

// out[m] = x[index[m]] for x [N,C]; index -1 yields a zero row.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::int64_t> index, const char* label = "gather_rows");

// Inverse of gather_rows: out [rows,C] holds the mean of every y row routed to
// it (rows nobody writes stay zero). With a bijective index this is a scatter.
template <typename T>
Tensor<T> scatter_rows_mean(const Tensor<T>& y, std::span<const std::int64_t> index, std::size_t rows,
                            const char* label = "scatter_rows_mean");

// Cyclic shift of the last two axes: out[i+shift_h, j+shift_w] = x[i, j].
template <typename T>
Tensor<T> roll2(const Tensor<T>& x, std::int64_t shift_h, std::int64_t shift_w);

/// Batched multi-head scaled dot-product attention.
///
/// q [B,Lq,C], k and v [B,Lk,C]; head h uses channels [h*C/heads, (h+1)*C/heads).
/// `key_valid` (B*Lk flags, or empty for all valid) excludes keys from the
/// softmax. Every batch needs at least one valid key.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               std::span<const std::uint8_t> key_valid = {}, const char* label = "attention");

// Mean absolute error; the subgradient at zero residual is zero.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Helpers shared by modules that add their own primitives.
namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op);

// Debug builds verify that finite inputs produced finite outputs.
template <typename T>
void debug_check_finite(const char* op, std::initializer_list<const Tensor<T>*> inputs, const Tensor<T>& out);

} // namespace detail

} // namespace sscm
