#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "core/ops.hpp"
#include "core/ssct.hpp"
#include "train/gradcheck.hpp"
#include "test_util.hpp"

using namespace sscm;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

template <typename T>
Tensor<T> vec(std::vector<T> v)
{
    const auto n = v.size();
    return Tensor<T>({n}, std::move(v));
}

// Direct sliding-window sum with zero padding.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                               std::size_t stride, std::size_t pad)
{
    const auto ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const auto co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const auto ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> out(co * ho * wo, 0.0);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx) {
                double acc = b.defined() ? b.data()[o] : 0.0;
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) {
                            const long yy = long(y * stride + i) - long(pad), xi = long(xx * stride + j) - long(pad);
                            if (yy < 0 || xi < 0 || yy >= long(h) || xi >= long(wd))
                                continue;
                            acc += w.data()[((o * ci + c) * kh + i) * kw + j] * x.data()[(c * h + yy) * wd + xi];
                        }
                out[(o * ho + y) * wo + xx] = acc;
            }
    return out;
}

} // namespace

TEST_CASE("tensor construction rejects bad shapes")
{
    CHECK_THROWS_AS(Tensor<float>({2, 0}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1, 2, 3}), ShapeError);
    CHECK(Tensor<float>::scalar(3).item() == 3.0f);
}

TEST_CASE("elementwise examples")
{
    auto a = Tensor<double>({2}, {1, 2}), b = Tensor<double>({2}, {3, 4});
    auto s = add(a, b);
    CHECK(s.data()[0] == 4);
    CHECK(s.data()[1] == 6);
    auto r = relu(vec<double>({-1, 0, 2}));
    CHECK(r.data()[0] == 0);
    CHECK(r.data()[1] == 0);
    CHECK(r.data()[2] == 2);
    CHECK_THROWS_AS(add(a, vec<double>({1, 2, 3})), ShapeError);
}

TEST_CASE("mul by zeros gives zero output and zero gradient")
{
    auto x = vec<double>({1.5, -2, 3}).set_requires_grad(true);
    auto z = Tensor<double>::zeros({3});
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        loss = sum(mul(x, z));
    }
    backward(loss, tape);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(x.grad()[i] == 0.0);
    CHECK(loss.item() == 0.0);
}

TEST_CASE("matmul against triple loop")
{
    auto a = Tensor<double>({2, 2}, {1, 2, 3, 4}), b = Tensor<double>({2, 2}, {5, 6, 7, 8});
    auto c = matmul(a, b);
    const std::vector<double> expected{19, 22, 43, 50};
    CHECK(max_abs_diff(c.data(), expected) == 0.0);

    Rng rng(3);
    auto m = random_tensor<double>(rng, {4, 4});
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i)
        eye[i * 5] = 1;
    CHECK(max_abs_diff(matmul(m, Tensor<double>({4, 4}, eye)).data(), m.data()) == 0.0);
    auto zero = matmul(m, Tensor<double>::zeros({4, 3}));
    for (double v : zero.data())
        CHECK(v == 0.0);
    CHECK_THROWS_AS(matmul(m, Tensor<double>::zeros({3, 2})), ShapeError);
}

TEST_CASE("softmax examples")
{
    auto half = softmax(Tensor<double>({1, 2}, {0, 0}), 1);
    CHECK(half.data()[0] == doctest::Approx(0.5));
    CHECK(half.data()[1] == doctest::Approx(0.5));

    auto x = Tensor<double>({1, 3}, {1, 2, 3});
    auto y = softmax(x, 1);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const std::vector<double> oracle{std::exp(1.0) / z, std::exp(2.0) / z, std::exp(3.0) / z};
    CHECK(max_abs_diff(y.data(), oracle) < 1e-15);

    auto shifted = softmax(add_scalar(x, 100.0), 1);
    CHECK(max_abs_diff(shifted.data(), y.data()) < 1e-15);

    Rng rng(9);
    auto big = softmax(random_tensor<float>(rng, {4, 7}, -30, 30), 0);
    for (std::size_t c = 0; c < 7; ++c) {
        double s = 0;
        for (std::size_t r = 0; r < 4; ++r)
            s += big.at({r, c});
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("conv2d examples")
{
    Rng rng(11);
    auto x = random_tensor<double>(rng, {3, 5, 5});
    std::vector<double> eye(9, 0.0);
    for (int i = 0; i < 3; ++i)
        eye[i * 4] = 1;
    auto id = conv2d(x, Tensor<double>({3, 3, 1, 1}, eye), Tensor<double>::zeros({3}));
    CHECK(testutil::bitwise_equal(id, x));

    auto zero = conv2d(x, Tensor<double>::zeros({2, 3, 3, 3}), {}, 1, 1);
    CHECK(zero.shape() == Shape{2, 5, 5});
    for (double v : zero.data())
        CHECK(v == 0.0);

    auto img = random_tensor<double>(rng, {1, 4, 4});
    auto k = random_tensor<double>(rng, {1, 1, 3, 3});
    auto b = random_tensor<double>(rng, {1});
    CHECK(max_abs_diff(conv2d(img, k, b, 1, 1).data(), naive_conv(img, k, b, 1, 1)) < 1e-14);

    auto wide = random_tensor<double>(rng, {2, 7, 5});
    auto k2 = random_tensor<double>(rng, {3, 2, 3, 3});
    auto strided = conv2d(wide, k2, {}, 2, 1);
    CHECK(strided.shape() == Shape{3, 4, 3});
    CHECK_THROWS_AS(conv2d(random_tensor<double>(rng, {2, 7, 6}), k2, {}, 2, 1), ShapeError);
    CHECK(max_abs_diff(strided.data(), naive_conv(wide, k2, {}, 2, 1)) < 1e-14);

    CHECK_THROWS_AS(conv2d(img, Tensor<double>::zeros({1, 1, 2, 2})), ShapeError);
    CHECK_THROWS_AS(conv2d(random_tensor<double>(rng, {1, 4, 4}), k, {}, 2, 0), ShapeError);
}

TEST_CASE("backward examples")
{
    auto x = vec<double>({1, 2}).set_requires_grad(true);
    {
        Tape<double> tape;
        Tensor<double> loss;
        {
            TapeScope<double> scope(tape);
            loss = sum(x);
        }
        backward(loss, tape);
        CHECK(x.grad()[0] == 1.0);
        CHECK(x.grad()[1] == 1.0);
    }
    x.zero_grad();
    {
        Tape<double> tape;
        Tensor<double> loss;
        {
            TapeScope<double> scope(tape);
            loss = sum(mul(x, x));
        }
        backward(loss, tape);
        CHECK(x.grad()[0] == 2.0);
        CHECK(x.grad()[1] == 4.0);
    }
    Tape<double> tape;
    Tensor<double> y;
    {
        TapeScope<double> scope(tape);
        y = add(x, x);
    }
    CHECK_THROWS_AS(backward(y, tape), ContractError);
}

TEST_CASE("a leaf used twice accumulates both paths")
{
    auto x = vec<double>({0.5, -1.5, 2}).set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        loss = sum(add(x, x));
    }
    backward(loss, tape);
    for (double g : x.grad())
        CHECK(g == 2.0);
}

TEST_CASE("no tape, no recording")
{
    auto x = vec<double>({1, 2}).set_requires_grad(true);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        NoGradScope<double> off;
        (void)add(x, x);
    }
    CHECK(tape.size() == 0);
    {
        TapeScope<double> scope(tape);
        (void)add(vec<double>({1, 2}), vec<double>({1, 2}));
    }
    CHECK(tape.size() == 0);
}

TEST_CASE("tiny two-layer conv net matches finite differences")
{
    Rng rng(21);
    auto x = random_tensor<double>(rng, {2, 5, 5});
    auto w1 = random_tensor<double>(rng, {3, 2, 3, 3}), b1 = random_tensor<double>(rng, {3});
    auto w2 = random_tensor<double>(rng, {1, 3, 3, 3}), b2 = random_tensor<double>(rng, {1});
    const auto r = train::check_gradients(
        "two_layer_conv", {{"x", x}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}},
        [=] { return conv2d(gelu(conv2d(x, w1, b1, 1, 1)), w2, b2, 1, 1); }, 1);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("linear toy op is exact up to roundoff")
{
    Rng rng(5);
    auto a = random_tensor<double>(rng, {6});
    const auto r = train::check_gradients("scale", {{"a", a}}, [=] { return scale(a, 3.0); }, 2);
    CHECK(r.max_rel_error <= 1e-10);
}

TEST_CASE("a corrupted backward rule is flagged")
{
    // y = 2x forward, but the backward rule pretends dy/dx = 1.
    auto broken = [](const Tensor<double>& x) {
        std::vector<double> v(x.data().begin(), x.data().end());
        for (auto& e : v)
            e *= 2;
        Tensor<double> y(x.shape(), std::move(v));
        if (detail::should_record<double>({&x})) {
            y.set_requires_grad(true);
            active_tape<double>()->record("broken_double", [xn = x.node(), yn = y.node()] {
                auto& g = xn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += yn->grad[i];
            });
        }
        return y;
    };
    Rng rng(8);
    auto x = random_tensor<double>(rng, {5});
    const auto r = train::check_gradients("broken", {{"x", x}}, [=] { return broken(x); }, 1);
    CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("gather and scatter round trip")
{
    auto x = Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6});
    const std::vector<std::int64_t> idx{2, -1, 0, 1};
    auto g = gather_rows<double>(x, idx);
    const std::vector<double> expected{5, 6, 0, 0, 1, 2, 3, 4};
    CHECK(max_abs_diff(g.data(), expected) == 0.0);
    auto back = scatter_rows_mean<double>(g, idx, 3);
    CHECK(testutil::bitwise_equal(back, x));
}

TEST_CASE("roll2 shifts cyclically")
{
    auto x = Tensor<double>({2, 3}, {0, 1, 2, 3, 4, 5});
    auto y = roll2(x, 1, 1);
    // out[i+1, j+1] = x[i, j]
    CHECK(y.at({1, 1}) == 0);
    CHECK(y.at({0, 0}) == 5);
    CHECK(y.at({1, 0}) == 2);
}

TEST_CASE("l1 loss examples")
{
    CHECK(l1_loss(vec<double>({1, 2}), vec<double>({1, 2})).item() == 0.0);
    CHECK(l1_loss(vec<double>({1}), vec<double>({0})).item() == 1.0);
    auto p = vec<double>({0.5, -1, 2, 3}).set_requires_grad(true);
    auto t = vec<double>({1, -2, 2, 1});
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        loss = l1_loss(p, t);
    }
    backward(loss, tape);
    const std::vector<double> expected{-0.25, 0.25, 0.0, 0.25};
    CHECK(max_abs_diff(p.grad(), expected) == 0.0);
    CHECK_THROWS_AS(l1_loss(p, vec<double>({1})), ShapeError);
}

TEST_CASE("identical inputs give bitwise identical outputs and gradients")
{
    auto run = [] {
        Rng rng(77);
        auto x = random_tensor<float>(rng, {3, 8, 8}).set_requires_grad(true);
        auto w = random_tensor<float>(rng, {3, 3, 3, 3});
        Tape<float> tape;
        Tensor<float> loss;
        {
            TapeScope<float> scope(tape);
            loss = mean(gelu(conv2d(x, w, {}, 1, 1)));
        }
        backward(loss, tape);
        return std::pair{loss.item(), std::vector<float>(x.grad().begin(), x.grad().end())};
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(std::memcmp(a.second.data(), b.second.data(), a.second.size() * sizeof(float)) == 0);
}

TEST_CASE("SSCT layout and roundtrip")
{
    auto t = Tensor<float>({2, 3}, {1, -2, 3.5f, 4, 5, 6});
    std::stringstream ss;
    write_ssct(ss, t);
    const auto bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 3 + 2 * 4 + 6 * 4);
    CHECK(bytes.substr(0, 4) == "SSCT");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 2);
    CHECK(static_cast<unsigned char>(bytes[7]) == 2);
    auto back = read_ssct<float>(ss);
    CHECK(testutil::bitwise_equal(back, t));

    std::stringstream d;
    auto td = Tensor<double>({3}, {0.1, 0.2, 0.3});
    write_ssct(d, td);
    CHECK(peek_ssct_dtype(d) == DType::f64);
    CHECK(testutil::bitwise_equal(read_ssct<double>(d), td));

    std::stringstream bad("SSCX....");
    CHECK_THROWS_AS(read_ssct<float>(bad), FormatError);
    CHECK_THROWS_AS(load_ssct<float>("/nonexistent/x.ssct"), IoError);
}
