#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "core/eigen.hpp"

namespace sscm {

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs)
{
    if (active_tape<T>() == nullptr)
        return false;
    for (const auto* t : inputs)
        if (t->defined() && t->requires_grad())
            return true;
    return false;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void debug_check_finite([[maybe_unused]] const char* op, [[maybe_unused]] std::initializer_list<const Tensor<T>*> inputs,
                        [[maybe_unused]] const Tensor<T>& out)
{
#ifndef NDEBUG
    auto finite = [](std::span<const T> v) {
        return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
    };
    for (const auto* t : inputs)
        if (t->defined() && !finite(t->data()))
            return;
    if (!finite(out.data()))
        throw ContractError(std::string(op) + ": produced non-finite values from finite inputs");
#endif
}

} // namespace detail

namespace {

using detail::check_same_shape;
using detail::debug_check_finite;
using detail::should_record;

// Plain loops: Eigen's vectorised reductions peel by buffer address, which
// makes the summation order (and last bits) vary between runs.
template <typename T>
void add_row_sums(const CMapR<T>& m, std::vector<T>& out)
{
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        T s = T(0);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            s += m(r, c);
        out[std::size_t(r)] += s;
    }
}

template <typename T>
void add_column_sums(const CMapR<T>& m, std::vector<T>& out)
{
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out[std::size_t(c)] += m(r, c);
}

template <typename T>
void accumulate(TensorNode<T>& node, std::span<const T> delta)
{
    if (!node.requires_grad)
        return;
    auto& g = node.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += delta[i];
}

// Builds the output of an elementwise unary op and registers
// dx = dy * derivative(x, y).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* name, const Tensor<T>& a, Fwd fwd, Deriv deriv)
{
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = fwd(x[i]);
    const bool rec = should_record<T>({&a});
    Tensor<T> y(a.shape(), std::move(out), rec);
    debug_check_finite<T>(name, {&a}, y);
    if (rec) {
        active_tape<T>()->record(name, [an = a.node(), yn = y.node(), deriv] {
            if (yn->grad.empty() || !an->requires_grad)
                return;
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += yn->grad[i] * deriv(an->data[i], yn->data[i]);
        });
    }
    return y;
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    check_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto z = b.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] + z[i];
    const bool rec = should_record<T>({&a, &b});
    Tensor<T> y(a.shape(), std::move(out), rec);
    debug_check_finite<T>("add", {&a, &b}, y);
    if (rec) {
        active_tape<T>()->record("add", [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty())
                return;
            accumulate<T>(*an, yn->grad);
            accumulate<T>(*bn, yn->grad);
        });
    }
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto z = b.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] - z[i];
    const bool rec = should_record<T>({&a, &b});
    Tensor<T> y(a.shape(), std::move(out), rec);
    debug_check_finite<T>("sub", {&a, &b}, y);
    if (rec) {
        active_tape<T>()->record("sub", [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty())
                return;
            accumulate<T>(*an, yn->grad);
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] -= yn->grad[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto z = b.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] * z[i];
    const bool rec = should_record<T>({&a, &b});
    Tensor<T> y(a.shape(), std::move(out), rec);
    debug_check_finite<T>("mul", {&a, &b}, y);
    if (rec) {
        active_tape<T>()->record("mul", [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty())
                return;
            const auto& gy = yn->grad;
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += gy[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += gy[i] * an->data[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    return unary<T>("scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset)
{
    return unary<T>("add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a)
{
    return unary<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a)
{
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return unary<T>(
        "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [](T x, T) {
            T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
            return cdf + x * pdf;
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    T acc = 0;
    for (T v : a.data())
        acc += v;
    const bool rec = should_record<T>({&a});
    Tensor<T> y(Shape{}, {acc}, rec);
    if (rec) {
        active_tape<T>()->record("sum", [an = a.node(), yn = y.node()] {
            if (yn->grad.empty() || !an->requires_grad)
                return;
            auto& g = an->ensure_grad();
            for (auto& v : g)
                v += yn->grad[0];
        });
    }
    return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a)
{
    T acc = 0;
    for (T v : a.data())
        acc += v;
    const T inv = T(1) / static_cast<T>(a.numel());
    const bool rec = should_record<T>({&a});
    Tensor<T> y(Shape{}, {acc * inv}, rec);
    if (rec) {
        active_tape<T>()->record("mean", [an = a.node(), yn = y.node(), inv] {
            if (yn->grad.empty() || !an->requires_grad)
                return;
            auto& g = an->ensure_grad();
            for (auto& v : g)
                v += yn->grad[0] * inv;
        });
    }
    return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
    const bool rec = should_record<T>({&a, &b});
    Tensor<T> y({m, n}, std::move(out), rec);
    debug_check_finite<T>("matmul", {&a, &b}, y);
    if (rec) {
        active_tape<T>()->record("matmul", [an = a.node(), bn = b.node(), yn = y.node(), m, k, n] {
            if (yn->grad.empty())
                return;
            CMapR<T> gy(yn->grad.data(), m, n);
            if (an->requires_grad)
                MapR<T>(an->ensure_grad().data(), m, k).noalias() += gy * CMapR<T>(bn->data.data(), k, n).transpose();
            if (bn->requires_grad)
                MapR<T>(bn->ensure_grad().data(), k, n).noalias() += CMapR<T>(an->data.data(), m, k).transpose() * gy;
        });
    }
    return y;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(0))
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(weight.shape()));
    const auto rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
    if (bias.defined() && bias.shape() != Shape{out_dim})
        throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
    std::vector<T> out(rows * out_dim);
    MapR<T> ym(out.data(), rows, out_dim);
    ym.noalias() = CMapR<T>(x.data().data(), rows, in) * CMapR<T>(weight.data().data(), in, out_dim);
    if (bias.defined())
        ym.rowwise() += CMapR<T>(bias.data().data(), 1, out_dim).row(0);
    const bool rec = should_record<T>({&x, &weight, &bias});
    Tensor<T> y({rows, out_dim}, std::move(out), rec);
    debug_check_finite<T>("linear", {&x, &weight, &bias}, y);
    if (rec) {
        auto bn = bias.defined() ? bias.node() : nullptr;
        active_tape<T>()->record(
            "linear", [xn = x.node(), wn = weight.node(), bn, yn = y.node(), rows, in, out_dim] {
                if (yn->grad.empty())
                    return;
                CMapR<T> gy(yn->grad.data(), rows, out_dim);
                if (xn->requires_grad)
                    MapR<T>(xn->ensure_grad().data(), rows, in).noalias() +=
                        gy * CMapR<T>(wn->data.data(), in, out_dim).transpose();
                if (wn->requires_grad)
                    MapR<T>(wn->ensure_grad().data(), in, out_dim).noalias() +=
                        CMapR<T>(xn->data.data(), rows, in).transpose() * gy;
                if (bn && bn->requires_grad)
                    add_column_sums(gy, bn->ensure_grad());
            });
    }
    return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis)
{
    if (axis >= x.ndim())
        throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    const std::size_t len = x.dim(axis);
    for (std::size_t i = 0; i < axis; ++i)
        outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i)
        inner *= x.dim(i);
    std::vector<T> out(x.numel());
    auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < len; ++i)
                mx = std::max(mx, in[base + i * inner]);
            T total = 0;
            for (std::size_t i = 0; i < len; ++i) {
                T e = std::exp(in[base + i * inner] - mx);
                out[base + i * inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < len; ++i)
                out[base + i * inner] /= total;
        }
    }
    const bool rec = should_record<T>({&x});
    Tensor<T> y(x.shape(), std::move(out), rec);
    debug_check_finite<T>("softmax", {&x}, y);
    if (rec) {
        active_tape<T>()->record("softmax", [xn = x.node(), yn = y.node(), outer, inner, len] {
            if (yn->grad.empty() || !xn->requires_grad)
                return;
            auto& g = xn->ensure_grad();
            const auto& gy = yn->grad;
            const auto& p = yn->data;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t j = 0; j < inner; ++j) {
                    const std::size_t base = o * len * inner + j;
                    T dot = 0;
                    for (std::size_t i = 0; i < len; ++i)
                        dot += gy[base + i * inner] * p[base + i * inner];
                    for (std::size_t i = 0; i < len; ++i)
                        g[base + i * inner] += p[base + i * inner] * (gy[base + i * inner] - dot);
                }
            }
        });
    }
    return y;
}

namespace {

struct ConvGeometry {
    std::size_t cin, h, w, kh, kw, stride, pad, hout, wout;
    std::size_t patch() const { return cin * kh * kw; }
    std::size_t pixels() const { return hout * wout; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols)
{
    const auto hw = g.pixels();
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((c * g.kh + ky) * g.kw + kx) * hw;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.wout;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wout, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx)
{
    const auto hw = g.pixels();
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * hw;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h))
                        continue;
                    const T* src = row + oy * g.wout;
                    T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w))
                            dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad)
{
    if (x.ndim() != 3 || weight.ndim() != 4 || weight.dim(1) != x.dim(0))
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    if (stride == 0)
        throw ShapeError("conv2d: stride must be positive");
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(2), weight.dim(3), stride, pad, 0, 0};
    if (g.kh % 2 == 0 || g.kw % 2 == 0)
        throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(weight.shape()));
    if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw || (g.h + 2 * pad - g.kh) % stride != 0 ||
        (g.w + 2 * pad - g.kw) % stride != 0)
        throw ShapeError("conv2d: non-integer output extent for input " + shape_str(x.shape()) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad));
    g.hout = (g.h + 2 * pad - g.kh) / stride + 1;
    g.wout = (g.w + 2 * pad - g.kw) / stride + 1;
    const auto cout = weight.dim(0);
    if (bias.defined() && bias.shape() != Shape{cout})
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));

    std::vector<T> out(cout * g.pixels());
    MapR<T> ym(out.data(), cout, g.pixels());
    CMapR<T> wm(weight.data().data(), cout, g.patch());
    if (g.pointwise()) {
        ym.noalias() = wm * CMapR<T>(x.data().data(), g.cin, g.pixels());
    } else {
        std::vector<T> cols(g.patch() * g.pixels());
        im2col(x.data().data(), g, cols.data());
        ym.noalias() = wm * CMapR<T>(cols.data(), g.patch(), g.pixels());
    }
    if (bias.defined())
        ym.colwise() += CMapR<T>(bias.data().data(), cout, 1).col(0);

    const bool rec = should_record<T>({&x, &weight, &bias});
    Tensor<T> y({cout, g.hout, g.wout}, std::move(out), rec);
    debug_check_finite<T>("conv2d", {&x, &weight, &bias}, y);
    if (rec) {
        auto bn = bias.defined() ? bias.node() : nullptr;
        active_tape<T>()->record("conv2d", [xn = x.node(), wn = weight.node(), bn, yn = y.node(), g, cout] {
            if (yn->grad.empty())
                return;
            CMapR<T> gy(yn->grad.data(), cout, g.pixels());
            CMapR<T> wm(wn->data.data(), cout, g.patch());
            if (bn && bn->requires_grad)
                add_row_sums(gy, bn->ensure_grad());
            if (g.pointwise()) {
                if (wn->requires_grad)
                    MapR<T>(wn->ensure_grad().data(), cout, g.patch()).noalias() +=
                        gy * CMapR<T>(xn->data.data(), g.cin, g.pixels()).transpose();
                if (xn->requires_grad)
                    MapR<T>(xn->ensure_grad().data(), g.cin, g.pixels()).noalias() += wm.transpose() * gy;
                return;
            }
            std::vector<T> cols(g.patch() * g.pixels());
            if (wn->requires_grad) {
                im2col(xn->data.data(), g, cols.data());
                MapR<T>(wn->ensure_grad().data(), cout, g.patch()).noalias() +=
                    gy * CMapR<T>(cols.data(), g.patch(), g.pixels()).transpose();
            }
            if (xn->requires_grad) {
                MapR<T>(cols.data(), g.patch(), g.pixels()).noalias() = wm.transpose() * gy;
                col2im_add(cols.data(), g, xn->ensure_grad().data());
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    const bool rec = should_record<T>({&x});
    Tensor<T> y(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), rec);
    if (rec) {
        active_tape<T>()->record("reshape", [xn = x.node(), yn = y.node()] {
            if (!yn->grad.empty())
                accumulate<T>(*xn, yn->grad);
        });
    }
    return y;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x)
{
    if (x.ndim() != 2)
        throw ShapeError("transpose2d: expected rank 2, got " + shape_str(x.shape()));
    const auto r = x.dim(0), c = x.dim(1);
    std::vector<T> out(x.numel());
    MapR<T>(out.data(), c, r) = CMapR<T>(x.data().data(), r, c).transpose();
    const bool rec = should_record<T>({&x});
    Tensor<T> y({c, r}, std::move(out), rec);
    if (rec) {
        active_tape<T>()->record("transpose2d", [xn = x.node(), yn = y.node(), r, c] {
            if (yn->grad.empty() || !xn->requires_grad)
                return;
            MapR<T>(xn->ensure_grad().data(), r, c) += CMapR<T>(yn->grad.data(), c, r).transpose();
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts)
{
    if (parts.empty())
        throw ShapeError("concat: no inputs");
    Shape shape = parts.front().shape();
    if (shape.empty())
        throw ShapeError("concat: scalar inputs");
    std::size_t lead = 0;
    for (const auto& p : parts) {
        if (p.ndim() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1))
            throw ShapeError("concat: trailing extents differ: " + shape_str(shape) + " vs " + shape_str(p.shape()));
        lead += p.dim(0);
    }
    shape[0] = lead;
    std::vector<T> out;
    out.reserve(shape_numel(shape));
    bool rec = false;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        rec = rec || should_record<T>({&p});
    }
    Tensor<T> y(std::move(shape), std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& p : parts)
            nodes.push_back(p.node());
        active_tape<T>()->record("concat", [nodes, yn = y.node()] {
            if (yn->grad.empty())
                return;
            std::size_t offset = 0;
            for (const auto& n : nodes) {
                accumulate<T>(*n, std::span<const T>(yn->grad).subspan(offset, n->data.size()));
                offset += n->data.size();
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end)
{
    if (x.ndim() == 0 || begin >= end || end > x.dim(0))
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(x.shape()));
    Shape shape = x.shape();
    const std::size_t row = x.numel() / shape[0];
    shape[0] = end - begin;
    const bool rec = should_record<T>({&x});
    Tensor<T> y(std::move(shape),
                std::vector<T>(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                               x.data().begin() + static_cast<std::ptrdiff_t>(end * row)),
                rec);
    if (rec) {
        active_tape<T>()->record("slice", [xn = x.node(), yn = y.node(), offset = begin * row] {
            if (yn->grad.empty() || !xn->requires_grad)
                return;
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                g[offset + i] += yn->grad[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::int64_t> index, const char* label)
{
    if (x.ndim() != 2)
        throw ShapeError("gather_rows: expected [N,C], got " + shape_str(x.shape()));
    const auto n = x.dim(0), c = x.dim(1);
    std::vector<std::int64_t> idx(index.begin(), index.end());
    std::vector<T> out(idx.size() * c, T(0));
    auto src = x.data();
    for (std::size_t m = 0; m < idx.size(); ++m) {
        if (idx[m] < 0)
            continue;
        if (static_cast<std::size_t>(idx[m]) >= n)
            throw ShapeError("gather_rows: index " + std::to_string(idx[m]) + " out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[m]) * c), c,
                    out.begin() + static_cast<std::ptrdiff_t>(m * c));
    }
    const bool rec = should_record<T>({&x});
    Tensor<T> y({idx.size(), c}, std::move(out), rec);
    if (rec) {
        active_tape<T>()->record(label, [xn = x.node(), yn = y.node(), idx = std::move(idx), c] {
            if (yn->grad.empty() || !xn->requires_grad)
                return;
            auto& g = xn->ensure_grad();
            for (std::size_t m = 0; m < idx.size(); ++m) {
                if (idx[m] < 0)
                    continue;
                T* dst = g.data() + static_cast<std::size_t>(idx[m]) * c;
                const T* src = yn->grad.data() + m * c;
                for (std::size_t j = 0; j < c; ++j)
                    dst[j] += src[j];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scatter_rows_mean(const Tensor<T>& y, std::span<const std::int64_t> index, std::size_t rows,
                            const char* label)
{
    if (y.ndim() != 2 || y.dim(0) != index.size())
        throw ShapeError("scatter_rows_mean: " + shape_str(y.shape()) + " does not match " +
                         std::to_string(index.size()) + " indices");
    const auto c = y.dim(1);
    std::vector<std::int64_t> idx(index.begin(), index.end());
    std::vector<T> inv_count(rows, T(0));
    for (auto i : idx) {
        if (i < 0)
            continue;
        if (static_cast<std::size_t>(i) >= rows)
            throw ShapeError("scatter_rows_mean: index " + std::to_string(i) + " out of range");
        inv_count[static_cast<std::size_t>(i)] += T(1);
    }
    for (auto& v : inv_count)
        v = v > T(0) ? T(1) / v : T(0);
    std::vector<T> out(rows * c, T(0));
    auto src = y.data();
    for (std::size_t m = 0; m < idx.size(); ++m) {
        if (idx[m] < 0)
            continue;
        T* dst = out.data() + static_cast<std::size_t>(idx[m]) * c;
        for (std::size_t j = 0; j < c; ++j)
            dst[j] += src[m * c + j];
    }
    for (std::size_t r = 0; r < rows; ++r)
        if (inv_count[r] != T(1))
            for (std::size_t j = 0; j < c; ++j)
                out[r * c + j] *= inv_count[r];
    const bool rec = should_record<T>({&y});
    Tensor<T> z({rows, c}, std::move(out), rec);
    if (rec) {
        active_tape<T>()->record(
            label, [yn = y.node(), zn = z.node(), idx = std::move(idx), inv_count = std::move(inv_count), c] {
                if (zn->grad.empty() || !yn->requires_grad)
                    return;
                auto& g = yn->ensure_grad();
                for (std::size_t m = 0; m < idx.size(); ++m) {
                    if (idx[m] < 0)
                        continue;
                    const auto r = static_cast<std::size_t>(idx[m]);
                    for (std::size_t j = 0; j < c; ++j)
                        g[m * c + j] += zn->grad[r * c + j] * inv_count[r];
                }
            });
    }
    return z;
}

namespace {

template <typename T>
void roll_into(const T* src, T* dst, std::size_t planes, std::size_t h, std::size_t w, std::size_t sh, std::size_t sw)
{
    for (std::size_t p = 0; p < planes; ++p) {
        const T* s = src + p * h * w;
        T* d = dst + p * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            const std::size_t oi = (i + sh) % h;
            for (std::size_t j = 0; j < w; ++j)
                d[oi * w + (j + sw) % w] = s[i * w + j];
        }
    }
}

std::size_t wrap_shift(std::int64_t shift, std::size_t n)
{
    const auto m = static_cast<std::int64_t>(n);
    return static_cast<std::size_t>(((shift % m) + m) % m);
}

} // namespace

template <typename T>
Tensor<T> roll2(const Tensor<T>& x, std::int64_t shift_h, std::int64_t shift_w)
{
    if (x.ndim() < 2)
        throw ShapeError("roll2: expected rank >= 2, got " + shape_str(x.shape()));
    const auto h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
    const auto planes = x.numel() / (h * w);
    const auto sh = wrap_shift(shift_h, h), sw = wrap_shift(shift_w, w);
    std::vector<T> out(x.numel());
    roll_into(x.data().data(), out.data(), planes, h, w, sh, sw);
    const bool rec = should_record<T>({&x});
    Tensor<T> y(x.shape(), std::move(out), rec);
    if (rec) {
        active_tape<T>()->record("roll2", [xn = x.node(), yn = y.node(), planes, h, w, sh, sw] {
            if (yn->grad.empty() || !xn->requires_grad)
                return;
            std::vector<T> back(yn->grad.size());
            roll_into(yn->grad.data(), back.data(), planes, h, w, (h - sh) % h, (w - sw) % w);
            accumulate<T>(*xn, back);
        });
    }
    return y;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               std::span<const std::uint8_t> key_valid, const char* label)
{
    if (q.ndim() != 3 || k.ndim() != 3 || v.shape() != k.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2))
        throw ShapeError("attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
    const auto batch = q.dim(0), lq = q.dim(1), lk = k.dim(1), c = q.dim(2);
    if (heads == 0 || c % heads != 0)
        throw ShapeError("attention: channels " + std::to_string(c) + " not divisible by heads " +
                         std::to_string(heads));
    if (!key_valid.empty() && key_valid.size() != batch * lk)
        throw ShapeError("attention: key mask has wrong length");
    const auto d = c / heads;
    const T scale_factor = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<std::uint8_t> mask(key_valid.begin(), key_valid.end());

    // probs layout: [batch, heads, lq, lk]
    std::vector<T> probs(batch * heads * lq * lk);
    std::vector<T> out(batch * lq * c);
    MatR<T> scores(lq, lk);
    for (std::size_t b = 0; b < batch; ++b) {
        if (!mask.empty() && std::none_of(mask.begin() + static_cast<std::ptrdiff_t>(b * lk),
                                          mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * lk),
                                          [](std::uint8_t f) { return f != 0; }))
            throw ContractError("attention: batch entry without any valid key");
        for (std::size_t h = 0; h < heads; ++h) {
            CStridedMap<T> qh(q.data().data() + b * lq * c + h * d, lq, d, Stride(c, 1));
            CStridedMap<T> kh(k.data().data() + b * lk * c + h * d, lk, d, Stride(c, 1));
            CStridedMap<T> vh(v.data().data() + b * lk * c + h * d, lk, d, Stride(c, 1));
            scores.noalias() = qh * kh.transpose();
            MapR<T> p(probs.data() + ((b * heads + h) * lq) * lk, lq, lk);
            for (std::size_t i = 0; i < lq; ++i) {
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < lk; ++j)
                    if (mask.empty() || mask[b * lk + j])
                        mx = std::max(mx, scores(i, j) * scale_factor);
                T total = 0;
                for (std::size_t j = 0; j < lk; ++j) {
                    T e = (mask.empty() || mask[b * lk + j]) ? std::exp(scores(i, j) * scale_factor - mx) : T(0);
                    p(i, j) = e;
                    total += e;
                }
                p.row(i) /= total;
            }
            StridedMap<T>(out.data() + b * lq * c + h * d, lq, d, Stride(c, 1)).noalias() = p * vh;
        }
    }
    const bool rec = should_record<T>({&q, &k, &v});
    Tensor<T> y({batch, lq, c}, std::move(out), rec);
    debug_check_finite<T>(label, {&q, &k, &v}, y);
    if (rec) {
        active_tape<T>()->record(label, [qn = q.node(), kn = k.node(), vn = v.node(), yn = y.node(),
                                         probs = std::move(probs), batch, heads, lq, lk, c, d, scale_factor] {
            if (yn->grad.empty())
                return;
            T* gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
            T* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
            T* gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
            MatR<T> dp(lq, lk);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t qoff = b * lq * c + h * d, koff = b * lk * c + h * d;
                    CMapR<T> p(probs.data() + ((b * heads + h) * lq) * lk, lq, lk);
                    CStridedMap<T> dout(yn->grad.data() + qoff, lq, d, Stride(c, 1));
                    CStridedMap<T> qh(qn->data.data() + qoff, lq, d, Stride(c, 1));
                    CStridedMap<T> kh(kn->data.data() + koff, lk, d, Stride(c, 1));
                    CStridedMap<T> vh(vn->data.data() + koff, lk, d, Stride(c, 1));
                    if (gv)
                        StridedMap<T>(gv + koff, lk, d, Stride(c, 1)).noalias() += p.transpose() * dout;
                    if (!gq && !gk)
                        continue;
                    dp.noalias() = dout * vh.transpose();
                    // dS = P * (dP - rowsum(dP * P)), then fold in the 1/sqrt(d) scale.
                    for (std::size_t i = 0; i < lq; ++i) {
                        T dot = 0;
                        for (std::size_t j = 0; j < lk; ++j)
                            dot += dp(i, j) * p(i, j);
                        for (std::size_t j = 0; j < lk; ++j)
                            dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale_factor;
                    }
                    if (gq)
                        StridedMap<T>(gq + qoff, lq, d, Stride(c, 1)).noalias() += dp * kh;
                    if (gk)
                        StridedMap<T>(gk + koff, lk, d, Stride(c, 1)).noalias() += dp.transpose() * qh;
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target)
{
    check_same_shape(pred, target, "l1_loss");
    T acc = 0;
    auto p = pred.data();
    auto t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i)
        acc += std::abs(p[i] - t[i]);
    const T inv = T(1) / static_cast<T>(p.size());
    const bool rec = should_record<T>({&pred, &target});
    Tensor<T> y(Shape{}, {acc * inv}, rec);
    debug_check_finite<T>("l1_loss", {&pred, &target}, y);
    if (rec) {
        active_tape<T>()->record("l1_loss", [pn = pred.node(), tn = target.node(), yn = y.node(), inv] {
            if (yn->grad.empty())
                return;
            const T g0 = yn->grad[0] * inv;
            for (std::size_t i = 0; i < pn->data.size(); ++i) {
                const T r = pn->data[i] - tn->data[i];
                const T s = r > T(0) ? g0 : (r < T(0) ? -g0 : T(0));
                if (pn->requires_grad)
                    pn->ensure_grad()[i] += s;
                if (tn->requires_grad)
                    tn->ensure_grad()[i] -= s;
            }
        });
    }
    return y;
}

#define SSCM_INSTANTIATE_OPS(T)                                                                                        \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                        \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                        \
    template Tensor<T> scale(const Tensor<T>&, T);                                                                     \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                                \
    template Tensor<T> relu(const Tensor<T>&);                                                                         \
    template Tensor<T> gelu(const Tensor<T>&);                                                                         \
    template Tensor<T> sum(const Tensor<T>&);                                                                          \
    template Tensor<T> mean(const Tensor<T>&);                                                                         \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                     \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                         \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                               \
    template Tensor<T> transpose2d(const Tensor<T>&);                                                                  \
    template Tensor<T> concat(const std::vector<Tensor<T>>&);                                                          \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t);                                              \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>, const char*);                      \
    template Tensor<T> scatter_rows_mean(const Tensor<T>&, std::span<const std::int64_t>, std::size_t, const char*);   \
    template Tensor<T> roll2(const Tensor<T>&, std::int64_t, std::int64_t);                                            \
    template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                            std::span<const std::uint8_t>, const char*);                               \
    template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                                    \
    template bool detail::should_record<T>(std::initializer_list<const Tensor<T>*>);                                   \
    template void detail::check_same_shape<T>(const Tensor<T>&, const Tensor<T>&, const char*);                        \
    template void detail::debug_check_finite<T>(const char*, std::initializer_list<const Tensor<T>*>, const Tensor<T>&);

SSCM_INSTANTIATE_OPS(float)
SSCM_INSTANTIATE_OPS(double)

} // namespace sscm
