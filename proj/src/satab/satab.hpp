#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "core/nn.hpp"

namespace sscm::satab {

/// K prototype vectors (rows of `centers`, unit L2 norm) that tokens are
/// grouped around. They receive no gradient; training moves them by EMA.
template <typename T>
struct TokenCenters {
    Tensor<T> centers; // [K, C]
    T ema_decay = T(0.99);
    std::vector<std::size_t> update_counts; // tokens absorbed per prototype

    std::size_t count() const { return centers.dim(0); }
    std::size_t dim() const { return centers.dim(1); }
};

// Unit-normalised standard-normal draws.
template <typename T>
TokenCenters<T> make_centers(std::size_t k, std::size_t channels, T ema_decay, Rng& rng);

struct GroupAssignment {
    std::vector<std::size_t> group_id;
    std::vector<double> similarity;
};

/// Tokens sorted by (group, index) and cut into fixed-size sub-groups. Slot
/// value -1 marks padding in the last sub-group.
struct SubGroupPartition {
    std::size_t group_size = 1;
    std::vector<std::int64_t> slots;

    std::size_t num_subgroups() const { return slots.size() / group_size; }
    std::vector<std::uint8_t> valid_mask() const;
};

// [C,H,W] -> [H*W, C]; row i holds pixel (i / W, i % W).
template <typename T>
Tensor<T> tokenize(const Tensor<T>& x);
template <typename T>
Tensor<T> detokenize(const Tensor<T>& tokens, std::size_t height, std::size_t width);

// argmax_j cos(x_i, c_j), lowest j on ties, zero-norm tokens go to group 0.
template <typename T>
GroupAssignment assign_groups(const Tensor<T>& tokens, const TokenCenters<T>& centers);

// c_k <- normalize(decay * c_k + (1 - decay) * mean of tokens in group k).
// Prototypes without tokens are left untouched.
template <typename T>
TokenCenters<T> ema_update(const TokenCenters<T>& centers, const Tensor<T>& tokens, const GroupAssignment& assignment);

SubGroupPartition partition_subgroups(const GroupAssignment& assignment, std::size_t group_size);

// Q/K/V and output projections of one multi-head attention.
template <typename T>
struct MhsaParams {
    Linear<T> q, k, v, out;
    std::size_t heads = 1;

    MhsaParams() = default;
    MhsaParams(std::size_t channels, std::size_t heads, Rng& rng);
    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const;
};

// Masked self-attention inside every sub-group, scattered back to token order.
template <typename T>
Tensor<T> intra_group_attention(const SubGroupPartition& partition, const Tensor<T>& tokens,
                                const MhsaParams<T>& params);

// Tokens attend to the prototypes (keys and values). Each query is
// independent, so running it over all tokens in index order equals running it
// per sub-group and scattering back.
template <typename T>
Tensor<T> inter_group_cross_attention(const Tensor<T>& tokens, const TokenCenters<T>& centers,
                                      const MhsaParams<T>& params);

// block_input + fuse(concat(detok(Y_SA), detok(Y_CA))).
template <typename T>
Tensor<T> fuse_attention(const Tensor<T>& y_sa, const Tensor<T>& y_ca, const Conv2d<T>& fuse_conv,
                         const Tensor<T>& block_input);

/// Placement of overlapping p_s x p_s windows; the last window on each axis is
/// clamped to the image edge so every pixel is covered.
struct WindowLayout {
    std::size_t height = 0, width = 0, size = 0, stride = 0;
    std::vector<std::size_t> row_origins, col_origins;

    std::size_t num_windows() const { return row_origins.size() * col_origins.size(); }
    // Flattened pixel indices, window-major then row-major inside a window.
    std::vector<std::int64_t> pixel_index() const;
    // Number of windows covering each pixel, [H*W].
    std::vector<std::size_t> coverage() const;
};

WindowLayout make_window_layout(std::size_t height, std::size_t width, std::size_t size, std::size_t stride);

// Shared-projection MHSA per window, overlaps averaged. Returns [C,H,W].
template <typename T>
Tensor<T> patch_window_attention(const Tensor<T>& x, const WindowLayout& layout, const MhsaParams<T>& params);

struct SatabConfig {
    std::size_t channels = 32;
    std::size_t prototypes = 8;
    std::size_t sub_group = 64;
    std::size_t window = 8;
    std::size_t window_stride = 4;
    std::size_t heads = 4;
    std::size_t ffn_expansion = 2;
    double ema_decay = 0.99;
};

// Patch window attention with residual; stands in for the full block in
// ablations.
template <typename T>
class WindowAttentionBlock {
public:
    WindowAttentionBlock(const SatabConfig& cfg, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const;

    MhsaParams<T> attention;

private:
    std::size_t window_, stride_;
};

/// Semantic-aware token aggregation: prototype grouping, intra-group and
/// prototype cross-attention, 1x1 fusion, overlapping window attention and a
/// residual pointwise FFN. Training-mode forwards queue EMA updates that
/// apply_pending_ema() commits, in order, outside the tape.
template <typename T>
class Satab {
public:
    Satab(const SatabConfig& cfg, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, bool training);
    void apply_pending_ema();
    std::size_t pending_ema_count() const { return pending_.size(); }

    const TokenCenters<T>& centers() const { return centers_; }
    TokenCenters<T>& centers() { return centers_; }
    const GroupAssignment& last_assignment() const { return last_assignment_; }
    const SatabConfig& config() const { return cfg_; }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) const;

    MhsaParams<T> intra, cross, window;
    Conv2d<T> fuse;       // 1x1, 2C -> C
    Conv2d<T> ffn_expand; // 1x1, C -> eC
    Conv2d<T> ffn_reduce; // 1x1, eC -> C

private:
    struct PendingEma {
        Tensor<T> tokens;
        GroupAssignment assignment;
    };

    SatabConfig cfg_;
    TokenCenters<T> centers_;
    GroupAssignment last_assignment_;
    std::vector<PendingEma> pending_; // applied in forward order
};

} // namespace sscm::satab
