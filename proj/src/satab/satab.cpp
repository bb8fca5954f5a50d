#include "satab/satab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sscm::satab {

namespace {

template <typename T>
void normalize_rows(std::vector<T>& m, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r) {
        double n2 = 0;
        for (std::size_t c = 0; c < cols; ++c)
            n2 += static_cast<double>(m[r * cols + c]) * static_cast<double>(m[r * cols + c]);
        const double inv = n2 > 0 ? 1.0 / std::sqrt(n2) : 0.0;
        for (std::size_t c = 0; c < cols; ++c)
            m[r * cols + c] = static_cast<T>(static_cast<double>(m[r * cols + c]) * inv);
    }
}

} // namespace

template <typename T>
TokenCenters<T> make_centers(std::size_t k, std::size_t channels, T ema_decay, Rng& rng)
{
    if (k == 0)
        throw ConfigError("at least one prototype is required");
    std::vector<T> v(k * channels);
    for (auto& x : v)
        x = static_cast<T>(rng.normal());
    normalize_rows(v, k, channels);
    return {Tensor<T>({k, channels}, std::move(v)), ema_decay, std::vector<std::size_t>(k, 0)};
}

std::vector<std::uint8_t> SubGroupPartition::valid_mask() const
{
    std::vector<std::uint8_t> mask(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i)
        mask[i] = slots[i] >= 0 ? 1 : 0;
    return mask;
}

template <typename T>
Tensor<T> tokenize(const Tensor<T>& x)
{
    if (x.ndim() != 3)
        throw ShapeError("tokenize: expected [C,H,W], got " + shape_str(x.shape()));
    return transpose2d(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename T>
Tensor<T> detokenize(const Tensor<T>& tokens, std::size_t height, std::size_t width)
{
    if (tokens.ndim() != 2 || tokens.dim(0) != height * width)
        throw ShapeError("detokenize: " + shape_str(tokens.shape()) + " is not a " + std::to_string(height) + "x" +
                         std::to_string(width) + " token grid");
    return reshape(transpose2d(tokens), {tokens.dim(1), height, width});
}

template <typename T>
GroupAssignment assign_groups(const Tensor<T>& tokens, const TokenCenters<T>& centers)
{
    if (tokens.ndim() != 2 || tokens.dim(1) != centers.dim())
        throw ShapeError("assign_groups: token dim does not match prototype dim");
    const auto n = tokens.dim(0), c = tokens.dim(1), k = centers.count();
    auto x = tokens.data();
    auto p = centers.centers.data();
    std::vector<double> center_norm(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0;
        for (std::size_t d = 0; d < c; ++d)
            s += static_cast<double>(p[j * c + d]) * static_cast<double>(p[j * c + d]);
        center_norm[j] = std::sqrt(s);
    }
    GroupAssignment out{std::vector<std::size_t>(n, 0), std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t d = 0; d < c; ++d)
            s += static_cast<double>(x[i * c + d]) * static_cast<double>(x[i * c + d]);
        const double norm = std::sqrt(s);
        if (norm == 0)
            continue;
        double best = -2;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double dot = 0;
            for (std::size_t d = 0; d < c; ++d)
                dot += static_cast<double>(x[i * c + d]) * static_cast<double>(p[j * c + d]);
            const double cos = center_norm[j] > 0 ? dot / (norm * center_norm[j]) : 0.0;
            if (cos > best) {
                best = cos;
                best_j = j;
            }
        }
        out.group_id[i] = best_j;
        out.similarity[i] = best;
    }
    return out;
}

template <typename T>
TokenCenters<T> ema_update(const TokenCenters<T>& centers, const Tensor<T>& tokens, const GroupAssignment& assignment)
{
    const auto n = tokens.dim(0), c = tokens.dim(1), k = centers.count();
    if (assignment.group_id.size() != n || c != centers.dim())
        throw ShapeError("ema_update: tokens and assignment disagree");
    std::vector<double> sums(k * c, 0.0);
    std::vector<std::size_t> counts(k, 0);
    auto x = tokens.data();
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = assignment.group_id[i];
        ++counts[g];
        for (std::size_t d = 0; d < c; ++d)
            sums[g * c + d] += static_cast<double>(x[i * c + d]);
    }
    std::vector<T> next(centers.centers.data().begin(), centers.centers.data().end());
    const double decay = static_cast<double>(centers.ema_decay);
    auto updated_counts = centers.update_counts;
    updated_counts.resize(k, 0);
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0)
            continue;
        updated_counts[j] += counts[j];
        if (decay >= 1.0)
            continue; // frozen; renormalising would still move the last bit
        std::vector<double> row(c);
        double n2 = 0;
        for (std::size_t d = 0; d < c; ++d) {
            const double mean = sums[j * c + d] / static_cast<double>(counts[j]);
            row[d] = decay * static_cast<double>(next[j * c + d]) + (1.0 - decay) * mean;
            n2 += row[d] * row[d];
        }
        if (n2 == 0)
            continue;
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t d = 0; d < c; ++d)
            next[j * c + d] = static_cast<T>(row[d] * inv);
    }
    return {Tensor<T>(centers.centers.shape(), std::move(next)), centers.ema_decay, std::move(updated_counts)};
}

SubGroupPartition partition_subgroups(const GroupAssignment& assignment, std::size_t group_size)
{
    if (group_size == 0)
        throw ConfigError("sub-group size must be at least 1");
    const auto n = assignment.group_id.size();
    std::vector<std::int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return assignment.group_id[static_cast<std::size_t>(a)] < assignment.group_id[static_cast<std::size_t>(b)];
    });
    const auto groups = (n + group_size - 1) / group_size;
    order.resize(groups * group_size, -1);
    return {group_size, std::move(order)};
}

template <typename T>
MhsaParams<T>::MhsaParams(std::size_t channels, std::size_t heads_, Rng& rng)
    : q(channels, channels, false, rng), k(channels, channels, false, rng), v(channels, channels, false, rng),
      out(channels, channels, true, rng), heads(heads_)
{
    if (heads == 0 || channels % heads != 0)
        throw ConfigError("channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
}

template <typename T>
void MhsaParams<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) const
{
    q.register_params(reg, prefix + ".q");
    k.register_params(reg, prefix + ".k");
    v.register_params(reg, prefix + ".v");
    out.register_params(reg, prefix + ".out");
}

template <typename T>
Tensor<T> intra_group_attention(const SubGroupPartition& partition, const Tensor<T>& tokens,
                                const MhsaParams<T>& params)
{
    const auto n = tokens.dim(0), c = tokens.dim(1);
    const auto g = partition.group_size, s = partition.num_subgroups();
    const auto mask = partition.valid_mask();
    auto group = [&](const Linear<T>& proj) {
        return reshape(gather_rows(proj(tokens), partition.slots, "group_gather"), {s, g, c});
    };
    auto attended = multi_head_attention(group(params.q), group(params.k), group(params.v), params.heads, mask,
                                         "group_attention");
    auto back = scatter_rows_mean(reshape(attended, {s * g, c}), partition.slots, n, "group_scatter");
    return params.out(back);
}

template <typename T>
Tensor<T> inter_group_cross_attention(const Tensor<T>& tokens, const TokenCenters<T>& centers,
                                      const MhsaParams<T>& params)
{
    const auto n = tokens.dim(0), c = tokens.dim(1), k = centers.count();
    auto q = reshape(params.q(tokens), {1, n, c});
    auto kk = reshape(params.k(centers.centers), {1, k, c});
    auto v = reshape(params.v(centers.centers), {1, k, c});
    auto attended = multi_head_attention(q, kk, v, params.heads, {}, "prototype_attention");
    return params.out(reshape(attended, {n, c}));
}

template <typename T>
Tensor<T> fuse_attention(const Tensor<T>& y_sa, const Tensor<T>& y_ca, const Conv2d<T>& fuse_conv,
                         const Tensor<T>& block_input)
{
    detail::check_same_shape(y_sa, y_ca, "fuse_attention");
    const auto h = block_input.dim(1), w = block_input.dim(2);
    auto merged = concat<T>({detokenize(y_sa, h, w), detokenize(y_ca, h, w)});
    return add(block_input, fuse_conv(merged));
}

std::vector<std::int64_t> WindowLayout::pixel_index() const
{
    std::vector<std::int64_t> idx;
    idx.reserve(num_windows() * size * size);
    for (auto r0 : row_origins)
        for (auto c0 : col_origins)
            for (std::size_t dy = 0; dy < size; ++dy)
                for (std::size_t dx = 0; dx < size; ++dx)
                    idx.push_back(static_cast<std::int64_t>((r0 + dy) * width + c0 + dx));
    return idx;
}

std::vector<std::size_t> WindowLayout::coverage() const
{
    std::vector<std::size_t> cov(height * width, 0);
    for (auto i : pixel_index())
        ++cov[static_cast<std::size_t>(i)];
    return cov;
}

WindowLayout make_window_layout(std::size_t height, std::size_t width, std::size_t size, std::size_t stride)
{
    if (size == 0 || size > height || size > width)
        throw ConfigError("window size " + std::to_string(size) + " does not fit a " + std::to_string(height) + "x" +
                          std::to_string(width) + " grid");
    if (stride == 0 || stride > size)
        throw ConfigError("window stride must lie in [1, window size]");
    auto origins = [&](std::size_t extent) {
        std::vector<std::size_t> o;
        for (std::size_t pos = 0;; pos += stride) {
            if (pos + size >= extent) {
                o.push_back(extent - size);
                break;
            }
            o.push_back(pos);
        }
        return o;
    };
    return {height, width, size, stride, origins(height), origins(width)};
}

template <typename T>
Tensor<T> patch_window_attention(const Tensor<T>& x, const WindowLayout& layout, const MhsaParams<T>& params)
{
    if (x.ndim() != 3 || x.dim(1) != layout.height || x.dim(2) != layout.width)
        throw ShapeError("patch_window_attention: input " + shape_str(x.shape()) + " does not match window layout");
    const auto c = x.dim(0), n = layout.height * layout.width;
    const auto b = layout.num_windows(), l = layout.size * layout.size;
    const auto idx = layout.pixel_index();
    auto tokens = tokenize(x);
    auto windows = [&](const Linear<T>& proj) {
        return reshape(gather_rows(proj(tokens), idx, "window_gather"), {b, l, c});
    };
    auto attended = multi_head_attention(windows(params.q), windows(params.k), windows(params.v), params.heads, {},
                                         "window_attention");
    auto merged = scatter_rows_mean(reshape(attended, {b * l, c}), idx, n, "window_merge");
    return detokenize(params.out(merged), layout.height, layout.width);
}

template <typename T>
WindowAttentionBlock<T>::WindowAttentionBlock(const SatabConfig& cfg, Rng& rng)
    : attention(cfg.channels, cfg.heads, rng), window_(cfg.window), stride_(cfg.window_stride)
{
}

template <typename T>
Tensor<T> WindowAttentionBlock<T>::forward(const Tensor<T>& x) const
{
    const auto layout = make_window_layout(x.dim(1), x.dim(2), window_, stride_);
    return add(x, patch_window_attention(x, layout, attention));
}

template <typename T>
void WindowAttentionBlock<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) const
{
    attention.register_params(reg, prefix + ".window");
}

template <typename T>
Satab<T>::Satab(const SatabConfig& cfg, Rng& rng)
    : intra(cfg.channels, cfg.heads, rng), cross(cfg.channels, cfg.heads, rng), window(cfg.channels, cfg.heads, rng),
      fuse(2 * cfg.channels, cfg.channels, 1, rng), ffn_expand(cfg.channels, cfg.ffn_expansion * cfg.channels, 1, rng),
      ffn_reduce(cfg.ffn_expansion * cfg.channels, cfg.channels, 1, rng), cfg_(cfg),
      centers_(make_centers<T>(cfg.prototypes, cfg.channels, static_cast<T>(cfg.ema_decay), rng))
{
    if (cfg.sub_group == 0)
        throw ConfigError("sub-group size must be at least 1");
}

template <typename T>
Tensor<T> Satab<T>::forward(const Tensor<T>& x, bool training)
{
    if (x.ndim() != 3 || x.dim(0) != cfg_.channels)
        throw ShapeError("satab: expected [" + std::to_string(cfg_.channels) + ",H,W], got " + shape_str(x.shape()));
    const auto h = x.dim(1), w = x.dim(2);
    const auto layout = make_window_layout(h, w, cfg_.window, cfg_.window_stride);

    auto tokens = tokenize(x);
    auto assignment = assign_groups(tokens, centers_);
    const auto partition = partition_subgroups(assignment, cfg_.sub_group);
    auto y_sa = intra_group_attention(partition, tokens, intra);
    auto y_ca = inter_group_cross_attention(tokens, centers_, cross);
    auto f_a = fuse_attention(y_sa, y_ca, fuse, x);
    auto f_w = add(f_a, patch_window_attention(f_a, layout, window));
    auto out = add(f_w, ffn_reduce(gelu(ffn_expand(f_w))));

    if (training)
        pending_.push_back(PendingEma{tokens.detach(), assignment});
    last_assignment_ = std::move(assignment);
    return out;
}

template <typename T>
void Satab<T>::apply_pending_ema()
{
    NoGradScope<T> no_grad;
    for (const auto& p : pending_) {
        auto next = ema_update(centers_, p.tokens, p.assignment);
        // In place, so every handle to the prototype tensor sees the update.
        std::copy(next.centers.data().begin(), next.centers.data().end(), centers_.centers.mutable_data().begin());
        centers_.update_counts = std::move(next.update_counts);
    }
    pending_.clear();
}

template <typename T>
void Satab<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) const
{
    intra.register_params(reg, prefix + ".intra");
    cross.register_params(reg, prefix + ".cross");
    fuse.register_params(reg, prefix + ".fuse");
    window.register_params(reg, prefix + ".window");
    ffn_expand.register_params(reg, prefix + ".ffn.0");
    ffn_reduce.register_params(reg, prefix + ".ffn.1");
    reg.add(prefix + ".centers", centers_.centers, /*trainable=*/false);
}

#define SSCM_INSTANTIATE_SATAB(T)                                                                                      \
    template TokenCenters<T> make_centers<T>(std::size_t, std::size_t, T, Rng&);                                       \
    template Tensor<T> tokenize<T>(const Tensor<T>&);                                                                  \
    template Tensor<T> detokenize<T>(const Tensor<T>&, std::size_t, std::size_t);                                      \
    template GroupAssignment assign_groups<T>(const Tensor<T>&, const TokenCenters<T>&);                               \
    template TokenCenters<T> ema_update<T>(const TokenCenters<T>&, const Tensor<T>&, const GroupAssignment&);          \
    template struct MhsaParams<T>;                                                                                     \
    template Tensor<T> intra_group_attention<T>(const SubGroupPartition&, const Tensor<T>&, const MhsaParams<T>&);     \
    template Tensor<T> inter_group_cross_attention<T>(const Tensor<T>&, const TokenCenters<T>&, const MhsaParams<T>&); \
    template Tensor<T> fuse_attention<T>(const Tensor<T>&, const Tensor<T>&, const Conv2d<T>&, const Tensor<T>&);      \
    template Tensor<T> patch_window_attention<T>(const Tensor<T>&, const WindowLayout&, const MhsaParams<T>&);         \
    template class WindowAttentionBlock<T>;                                                                            \
    template class Satab<T>;

SSCM_INSTANTIATE_SATAB(float)
SSCM_INSTANTIATE_SATAB(double)

} // namespace sscm::satab
