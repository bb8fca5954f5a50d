#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "train/gradcheck.hpp"
#include "warp/dswm.hpp"
#include "test_util.hpp"

using namespace sscm;
using namespace sscm::warp;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

template <typename T>
Tensor<T> constant_field(std::size_t h, std::size_t w, T dx, T dy)
{
    std::vector<T> v(2 * h * w);
    std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h * w), dx);
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(h * w), v.end(), dy);
    return Tensor<T>({2, h, w}, std::move(v));
}

// out(y, x) = f(y + dy, x + dx) for integer shifts, zero outside.
template <typename T>
std::vector<T> index_shift(const Tensor<T>& f, long dx, long dy)
{
    const auto c = f.dim(0), h = f.dim(1), w = f.dim(2);
    std::vector<T> out(f.numel(), T(0));
    for (std::size_t k = 0; k < c; ++k)
        for (long y = 0; y < long(h); ++y)
            for (long x = 0; x < long(w); ++x) {
                const long sy = y + dy, sx = x + dx;
                if (sy >= 0 && sx >= 0 && sy < long(h) && sx < long(w))
                    out[(k * h + y) * w + x] = f.at({k, std::size_t(sy), std::size_t(sx)});
            }
    return out;
}

void set_identity(Conv2d<double>& conv, std::size_t offset)
{
    auto w = conv.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    const auto out = conv.out_channels(), in = conv.in_channels();
    for (std::size_t o = 0; o < out; ++o)
        w[o * in + o + offset] = 1.0;
    auto b = conv.bias.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
}

} // namespace

TEST_CASE("zero displacement is the bitwise identity")
{
    Rng rng(1);
    auto f = random_tensor<float>(rng, {3, 7, 9});
    CHECK(bitwise_equal(bilinear_warp(f, Tensor<float>::zeros({2, 7, 9})), f));
}

TEST_CASE("integer shifts match the index-shift oracle")
{
    Rng rng(2);
    auto f = random_tensor<float>(rng, {2, 6, 8});
    for (auto [dx, dy] : {std::pair{1, 0}, {0, 1}, {-2, 1}, {3, -2}}) {
        auto out = bilinear_warp(f, constant_field<float>(6, 8, float(dx), float(dy)));
        CHECK(max_abs_diff(out.data(), index_shift(f, dx, dy)) <= 1e-6);
    }
    auto right = bilinear_warp(f, constant_field<float>(6, 8, 1.0f, 0.0f));
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t y = 0; y < 6; ++y)
            CHECK(right.at({k, y, 7}) == 0.0f);
}

TEST_CASE("half-pixel shift on a ramp averages neighbours")
{
    const std::size_t h = 3, w = 5;
    std::vector<double> ramp(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            ramp[y * w + x] = 2.0 * double(x) + 1.0;
    Tensor<double> f({1, h, w}, ramp);
    auto out = bilinear_warp(f, constant_field<double>(h, w, 0.5, 0.0));
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x + 1 < w; ++x)
            CHECK(out.at({0, y, x}) == doctest::Approx(0.5 * (ramp[y * w + x] + ramp[y * w + x + 1])));
        // Right neighbour of the last column is outside and reads as zero.
        CHECK(out.at({0, y, w - 1}) == doctest::Approx(0.5 * ramp[y * w + w - 1]));
    }
}

TEST_CASE("warp is linear in the features")
{
    Rng rng(3);
    auto f = random_tensor<float>(rng, {2, 6, 6}), g = random_tensor<float>(rng, {2, 6, 6});
    auto d = random_tensor<float>(rng, {2, 6, 6}, -1.5, 1.5);
    const float a = 0.6f, b = -1.7f;
    auto lhs = bilinear_warp(add(scale(f, a), scale(g, b)), d);
    auto rhs = add(scale(bilinear_warp(f, d), a), scale(bilinear_warp(g, d), b));
    CHECK(max_abs_diff(lhs.data(), rhs.data()) <= 1e-6);
}

TEST_CASE("displacement gradient matches finite differences off the integer grid")
{
    Rng rng(4);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto f = random_tensor<double>(rng, {2, 5, 5});
        std::vector<double> dv(2 * 25);
        for (auto& v : dv)
            v = std::floor(rng.uniform(-2, 2)) + 0.25;
        Tensor<double> d({2, 5, 5}, dv);
        const auto r = train::check_gradients("warp", {{"features", f}, {"displacement", d}},
                                              [=] { return bilinear_warp(f, d); }, seed);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("feature extraction contracts")
{
    Rng rng(5);
    Dswm<double> m(4, true, rng);
    auto [ft, fr] = m.extract_features(Tensor<double>::zeros({1, 6, 6}), Tensor<double>::zeros({1, 6, 6}));
    CHECK(ft.shape() == Shape{4, 6, 6});
    CHECK(fr.shape() == Shape{4, 6, 6});
    // Zero images: only biases propagate, but zero padding means borders can differ
    // after the second conv; the interior is spatially constant.
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 2; y < 4; ++y)
            for (std::size_t x = 2; x < 4; ++x) {
                CHECK(ft.at({c, y, x}) == ft.at({c, 2, 2}));
                CHECK(fr.at({c, y, x}) == fr.at({c, 2, 2}));
            }
    CHECK_THROWS_AS(m.extract_features(Tensor<double>::zeros({1, 6, 6}), Tensor<double>::zeros({1, 4, 6})),
                    ShapeError);
}

TEST_CASE("fresh predictor outputs zero displacement")
{
    Rng rng(6);
    Dswm<float> m(4, true, rng);
    auto tar = random_tensor<float>(rng, {1, 8, 8}, 0, 1), ref = random_tensor<float>(rng, {1, 8, 8}, 0, 1);
    auto [ft, fr] = m.extract_features(tar, ref);
    const auto field = m.predict_displacement(ft, fr);
    CHECK(field.offsets.shape() == Shape{2, 8, 8});
    CHECK(field.max_magnitude() == 0.0);
    // Swapped inputs are allowed to differ; only require that it runs.
    (void)m.predict_displacement(fr, ft);
}

TEST_CASE("fusion weights select either half")
{
    Rng rng(7);
    Dswm<double> m(3, true, rng);
    auto ft = random_tensor<double>(rng, {3, 4, 4}), fa = random_tensor<double>(rng, {3, 4, 4});
    set_identity(m.params().fuse, 0);
    CHECK(bitwise_equal(m.fuse(ft, fa), ft));
    set_identity(m.params().fuse, 3);
    CHECK(bitwise_equal(m.fuse(ft, fa), fa));
    CHECK_THROWS_AS(m.fuse(ft, random_tensor<double>(rng, {2, 4, 4})), ShapeError);
}

TEST_CASE("module gradients")
{
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        auto m = std::make_shared<Dswm<double>>(3, true, rng);
        for (auto& v : m->params().predict3.weight.mutable_data())
            v = rng.uniform(-0.4, 0.4);
        for (auto& v : m->params().predict3.bias.mutable_data())
            v = rng.uniform(0.1, 0.3);
        auto tar = random_tensor<double>(rng, {1, 5, 5}, 0, 1), ref = random_tensor<double>(rng, {1, 5, 5}, 0, 1);
        ParamRegistry<double> reg;
        m->register_params(reg, "dswm");
        std::vector<train::GradInput> inputs;
        for (const auto& e : reg.entries())
            inputs.push_back({e.name, e.tensor});
        inputs.push_back({"tar", tar});
        inputs.push_back({"ref", ref});
        const auto r = train::check_gradients("dswm", inputs, [=] { return m->forward(tar, ref).features; }, seed);
        CHECK(r.max_rel_error <= 1e-4);

        // Predictor alone, with respect to theta.
        auto [ft, fr] = m->extract_features(tar.detach(), ref.detach());
        auto ftd = ft.detach(), frd = fr.detach();
        std::vector<train::GradInput> theta;
        for (const auto& e : reg.entries())
            if (e.name.find("predictor") != std::string::npos)
                theta.push_back({e.name, e.tensor});
        const auto rp = train::check_gradients("predictor", theta,
                                               [=] { return m->predict_displacement(ftd, frd).offsets; }, seed);
        CHECK(rp.max_rel_error <= 1e-4);
    }
}

TEST_CASE("disabled warping keeps the fusion and forces zero displacement")
{
    Rng rng(8);
    Dswm<float> m(4, false, rng);
    auto tar = random_tensor<float>(rng, {1, 8, 8}, 0, 1), ref = random_tensor<float>(rng, {1, 8, 8}, 0, 1);
    const auto out = m.forward(tar, ref);
    CHECK(out.displacement.max_magnitude() == 0.0);
    auto [ft, fr] = m.extract_features(tar, ref);
    CHECK(bitwise_equal(out.features, m.fuse(ft, fr)));
    ParamRegistry<float> reg;
    m.register_params(reg, "dswm");
    for (const auto& e : reg.entries())
        CHECK(e.name.find("predictor") == std::string::npos);

    Tape<float> tape;
    {
        TapeScope<float> scope(tape);
        (void)m.forward(tar, ref);
    }
    CHECK_FALSE(tape.contains("bilinear_warp"));
}
