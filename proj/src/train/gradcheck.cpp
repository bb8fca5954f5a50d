#include "train/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "core/ops.hpp"
#include "core/random.hpp"
#include "model/sscm.hpp"
#include "spectral/fft.hpp"

namespace sscm::train {

namespace {

Tensor<double> weighted_loss(const Tensor<double>& y, const Tensor<double>& w)
{
    return sum(mul(y, w));
}

double norm(const std::vector<double>& v)
{
    double s = 0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

} // namespace

GradcheckResult check_gradients(const std::string& name, const std::vector<GradInput>& inputs, const GradFunction& fn,
                                std::uint64_t seed)
{
    for (const auto& in : inputs) {
        auto t = in.tensor;
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Rng rng(seed ^ 0xA5A5A5A5ULL);
    Tensor<double> weights;
    {
        NoGradScope<double> off;
        const auto y = fn();
        std::vector<double> w(y.numel());
        for (auto& x : w)
            x = rng.uniform(-1.0, 1.0);
        weights = Tensor<double>(y.shape(), std::move(w));
    }

    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        loss = weighted_loss(fn(), weights);
    }
    backward(loss, tape);

    auto eval = [&] {
        NoGradScope<double> off;
        return weighted_loss(fn(), weights).item();
    };

    // An input whose true gradient is zero is judged against the gradient
    // scale of the whole check, not the bare floor.
    double total = 0;
    for (const auto& in : inputs)
        if (in.tensor.has_grad())
            for (double g : in.tensor.grad())
                total += g * g;
    const double floor = std::max(1e-3 * std::sqrt(total), 1e-7);

    GradcheckResult result{name, 0, "", 0};
    for (const auto& in : inputs) {
        auto t = in.tensor;
        const auto n = t.numel();
        std::vector<double> analytic(n, 0.0), numeric(n, 0.0);
        if (t.has_grad())
            std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const double theta = data[i];
            const double eps = 1e-5 * std::max(1.0, std::abs(theta));
            data[i] = theta + eps;
            const double up = eval();
            data[i] = theta - eps;
            const double down = eval();
            data[i] = theta;
            numeric[i] = (up - down) / (2 * eps);
        }
        std::vector<double> diff(n);
        for (std::size_t i = 0; i < n; ++i)
            diff[i] = analytic[i] - numeric[i];
        const double rel = norm(diff) / std::max({norm(analytic), norm(numeric), floor});
        result.points += n;
        if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_input = in.name;
        }
    }
    return result;
}

bool GradcheckReport::passed() const
{
    return std::all_of(entries.begin(), entries.end(), [](const Entry& e) { return e.passed; });
}

std::string GradcheckReport::format() const
{
    std::ostringstream os;
    char buf[200];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%-28s max_rel_err %.3e  %s%s\n", e.name.c_str(), e.max_rel_error,
                      e.passed ? "ok" : "FAIL", e.passed ? "" : ("  (" + e.worst_input + ")").c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%zu checks, tolerance %.0e, %.1fs: %s\n", entries.size(), tolerance, seconds,
                  passed() ? "PASS" : "FAIL");
    os << buf;
    return os.str();
}

namespace {

using T = double;

Tensor<T> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0)
{
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v)
        x = rng.uniform(lo, hi);
    return Tensor<T>(std::move(shape), std::move(v));
}

// Values bounded away from zero, for kinks at the origin.
Tensor<T> rand_away_from_zero(Rng& rng, Shape shape)
{
    auto t = rand_tensor(rng, std::move(shape), 0.1, 1.0);
    for (auto& x : t.mutable_data())
        if (rng.uniform() < 0.5)
            x = -x;
    return t;
}

std::vector<GradInput> registry_inputs(const ParamRegistry<T>& reg)
{
    std::vector<GradInput> out;
    for (const auto& e : reg.entries())
        if (e.trainable)
            out.push_back({e.name, e.tensor});
    return out;
}

Tensor<T> join(const spectral::ComplexTensor<T>& c)
{
    return concat<T>({c.re, c.im});
}

struct Case {
    std::string name;
    // Builds inputs and the function for one seed.
    std::function<std::pair<std::vector<GradInput>, GradFunction>(Rng&)> make;
};

std::vector<Case> suite_cases(bool include_model)
{
    std::vector<Case> cases;
    auto binary = [&](const char* name, Tensor<T> (*op)(const Tensor<T>&, const Tensor<T>&)) {
        cases.push_back({name, [op](Rng& rng) {
                             auto a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
                             return std::pair{std::vector<GradInput>{{"a", a}, {"b", b}},
                                              GradFunction([=] { return op(a, b); })};
                         }});
    };
    binary("add", &add<T>);
    binary("sub", &sub<T>);
    binary("mul", &mul<T>);
    cases.push_back({"scale", [](Rng& rng) {
                         auto a = rand_tensor(rng, {5});
                         return std::pair{std::vector<GradInput>{{"a", a}}, GradFunction([=] { return scale(a, 1.7); })};
                     }});
    cases.push_back({"add_scalar", [](Rng& rng) {
                         auto a = rand_tensor(rng, {5});
                         return std::pair{std::vector<GradInput>{{"a", a}},
                                          GradFunction([=] { return add_scalar(a, -0.3); })};
                     }});
    cases.push_back({"relu", [](Rng& rng) {
                         auto a = rand_away_from_zero(rng, {12});
                         return std::pair{std::vector<GradInput>{{"a", a}}, GradFunction([=] { return relu(a); })};
                     }});
    cases.push_back({"gelu", [](Rng& rng) {
                         auto a = rand_tensor(rng, {12}, -3, 3);
                         return std::pair{std::vector<GradInput>{{"a", a}}, GradFunction([=] { return gelu(a); })};
                     }});
    cases.push_back({"sum", [](Rng& rng) {
                         auto a = rand_tensor(rng, {2, 3});
                         return std::pair{std::vector<GradInput>{{"a", a}}, GradFunction([=] { return sum(a); })};
                     }});
    cases.push_back({"mean", [](Rng& rng) {
                         auto a = rand_tensor(rng, {2, 3});
                         return std::pair{std::vector<GradInput>{{"a", a}}, GradFunction([=] { return mean(a); })};
                     }});
    cases.push_back({"matmul", [](Rng& rng) {
                         auto a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {4, 2});
                         return std::pair{std::vector<GradInput>{{"a", a}, {"b", b}},
                                          GradFunction([=] { return matmul(a, b); })};
                     }});
    cases.push_back({"linear", [](Rng& rng) {
                         auto x = rand_tensor(rng, {5, 3}), w = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {4});
                         return std::pair{std::vector<GradInput>{{"x", x}, {"w", w}, {"b", b}},
                                          GradFunction([=] { return linear(x, w, b); })};
                     }});
    for (std::size_t axis : {0, 1}) {
        cases.push_back({"softmax_axis" + std::to_string(axis), [axis](Rng& rng) {
                             auto a = rand_tensor(rng, {3, 5}, -2, 2);
                             return std::pair{std::vector<GradInput>{{"a", a}},
                                              GradFunction([=] { return softmax(a, axis); })};
                         }});
    }
    cases.push_back({"conv2d", [](Rng& rng) {
                         auto x = rand_tensor(rng, {2, 5, 6}), w = rand_tensor(rng, {3, 2, 3, 3}),
                              b = rand_tensor(rng, {3});
                         return std::pair{std::vector<GradInput>{{"x", x}, {"w", w}, {"b", b}},
                                          GradFunction([=] { return conv2d(x, w, b, 1, 1); })};
                     }});
    cases.push_back({"conv2d_stride2", [](Rng& rng) {
                         auto x = rand_tensor(rng, {2, 7, 7}), w = rand_tensor(rng, {2, 2, 3, 3});
                         return std::pair{std::vector<GradInput>{{"x", x}, {"w", w}},
                                          GradFunction([=] { return conv2d(x, w, {}, 2, 1); })};
                     }});
    cases.push_back({"conv2d_1x1", [](Rng& rng) {
                         auto x = rand_tensor(rng, {3, 4, 4}), w = rand_tensor(rng, {2, 3, 1, 1}),
                              b = rand_tensor(rng, {2});
                         return std::pair{std::vector<GradInput>{{"x", x}, {"w", w}, {"b", b}},
                                          GradFunction([=] { return conv2d(x, w, b); })};
                     }});
    cases.push_back({"reshape_transpose", [](Rng& rng) {
                         auto a = rand_tensor(rng, {2, 6});
                         return std::pair{std::vector<GradInput>{{"a", a}},
                                          GradFunction([=] { return transpose2d(reshape(a, {3, 4})); })};
                     }});
    cases.push_back({"concat_slice", [](Rng& rng) {
                         auto a = rand_tensor(rng, {2, 3}), b = rand_tensor(rng, {3, 3});
                         return std::pair{std::vector<GradInput>{{"a", a}, {"b", b}},
                                          GradFunction([=] { return slice(concat<T>({a, b}), 1, 4); })};
                     }});
    cases.push_back({"gather_rows", [](Rng& rng) {
                         auto x = rand_tensor(rng, {4, 3});
                         static const std::vector<std::int64_t> idx{2, -1, 0, 2, 3};
                         return std::pair{std::vector<GradInput>{{"x", x}},
                                          GradFunction([=] { return gather_rows<T>(x, idx); })};
                     }});
    cases.push_back({"scatter_rows_mean", [](Rng& rng) {
                         auto y = rand_tensor(rng, {5, 3});
                         static const std::vector<std::int64_t> idx{2, -1, 0, 2, 3};
                         return std::pair{std::vector<GradInput>{{"y", y}},
                                          GradFunction([=] { return scatter_rows_mean<T>(y, idx, 5); })};
                     }});
    cases.push_back({"roll2", [](Rng& rng) {
                         auto x = rand_tensor(rng, {2, 3, 5});
                         return std::pair{std::vector<GradInput>{{"x", x}}, GradFunction([=] { return roll2(x, 1, -2); })};
                     }});
    cases.push_back({"multi_head_attention", [](Rng& rng) {
                         auto q = rand_tensor(rng, {2, 3, 4}), k = rand_tensor(rng, {2, 5, 4}),
                              v = rand_tensor(rng, {2, 5, 4});
                         static const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1, 0, 1, 1, 0};
                         return std::pair{std::vector<GradInput>{{"q", q}, {"k", k}, {"v", v}},
                                          GradFunction([=] { return multi_head_attention<T>(q, k, v, 2, mask); })};
                     }});
    cases.push_back({"l1_loss", [](Rng& rng) {
                         auto p = rand_tensor(rng, {6}), t = rand_tensor(rng, {6});
                         // Keep every residual away from the kink.
                         for (std::size_t i = 0; i < 6; ++i)
                             t.mutable_data()[i] = p.data()[i] + (i % 2 ? 0.3 : -0.4);
                         return std::pair{std::vector<GradInput>{{"pred", p}}, GradFunction([=] { return l1_loss(p, t); })};
                     }});
    cases.push_back({"fft2", [](Rng& rng) {
                         auto re = rand_tensor(rng, {2, 4, 8}), im = rand_tensor(rng, {2, 4, 8});
                         return std::pair{std::vector<GradInput>{{"re", re}, {"im", im}},
                                          GradFunction([=] { return join(spectral::fft2<T>({re, im})); })};
                     }});
    cases.push_back({"ifft2", [](Rng& rng) {
                         auto re = rand_tensor(rng, {4, 4}), im = rand_tensor(rng, {4, 4});
                         return std::pair{std::vector<GradInput>{{"re", re}, {"im", im}},
                                          GradFunction([=] { return join(spectral::ifft2<T>({re, im})); })};
                     }});
    cases.push_back({"rfft2", [](Rng& rng) {
                         auto x = rand_tensor(rng, {2, 4, 8});
                         return std::pair{std::vector<GradInput>{{"x", x}},
                                          GradFunction([=] { return join(spectral::rfft2(x)); })};
                     }});
    cases.push_back({"irfft2", [](Rng& rng) {
                         auto re = rand_tensor(rng, {2, 4, 5}), im = rand_tensor(rng, {2, 4, 5});
                         return std::pair{std::vector<GradInput>{{"re", re}, {"im", im}},
                                          GradFunction([=] { return spectral::irfft2<T>({re, im}, 8); })};
                     }});
    cases.push_back({"fftshift2", [](Rng& rng) {
                         auto re = rand_tensor(rng, {5, 4}), im = rand_tensor(rng, {5, 4});
                         return std::pair{std::vector<GradInput>{{"re", re}, {"im", im}}, GradFunction([=] {
                                              return join(spectral::ifftshift2(spectral::fftshift2<T>({re, im})));
                                          })};
                     }});
    cases.push_back({"bilinear_warp", [](Rng& rng) {
                         auto f = rand_tensor(rng, {2, 5, 6});
                         // Integer part plus 0.25 keeps every sample off the kinks.
                         std::vector<T> d(2 * 5 * 6);
                         for (auto& x : d)
                             x = std::floor(rng.uniform(-2.0, 2.0)) + 0.25;
                         Tensor<T> disp({2, 5, 6}, std::move(d));
                         return std::pair{std::vector<GradInput>{{"features", f}, {"displacement", disp}},
                                          GradFunction([=] { return warp::bilinear_warp(f, disp); })};
                     }});
    cases.push_back({"tokenize_detokenize", [](Rng& rng) {
                         auto x = rand_tensor(rng, {3, 2, 4});
                         return std::pair{std::vector<GradInput>{{"x", x}}, GradFunction([=] {
                                              return satab::detokenize(scale(satab::tokenize(x), 2.0), 2, 4);
                                          })};
                     }});
    cases.push_back({"intra_group_attention", [](Rng& rng) {
                         auto tokens = rand_tensor(rng, {10, 4});
                         auto centers = satab::make_centers<T>(3, 4, 0.9, rng);
                         const auto part = satab::partition_subgroups(satab::assign_groups(tokens, centers), 3);
                         auto params = std::make_shared<satab::MhsaParams<T>>(4, 2, rng);
                         auto reg = std::make_shared<ParamRegistry<T>>();
                         params->register_params(*reg, "mhsa");
                         auto inputs = registry_inputs(*reg);
                         inputs.push_back({"tokens", tokens});
                         return std::pair{inputs, GradFunction([=] {
                                              (void)reg;
                                              return satab::intra_group_attention(part, tokens, *params);
                                          })};
                     }});
    cases.push_back({"inter_group_cross_attention", [](Rng& rng) {
                         auto tokens = rand_tensor(rng, {6, 4});
                         auto centers = satab::make_centers<T>(3, 4, 0.9, rng);
                         auto params = std::make_shared<satab::MhsaParams<T>>(4, 2, rng);
                         auto reg = std::make_shared<ParamRegistry<T>>();
                         params->register_params(*reg, "mhsa");
                         auto inputs = registry_inputs(*reg);
                         inputs.push_back({"tokens", tokens});
                         return std::pair{inputs, GradFunction([=] {
                                              (void)reg;
                                              return satab::inter_group_cross_attention(tokens, centers, *params);
                                          })};
                     }});
    cases.push_back({"fuse_attention", [](Rng& rng) {
                         auto ysa = rand_tensor(rng, {6, 3}), yca = rand_tensor(rng, {6, 3}),
                              x = rand_tensor(rng, {3, 2, 3});
                         auto conv = std::make_shared<Conv2d<T>>(6, 3, 1, rng);
                         return std::pair{std::vector<GradInput>{{"y_sa", ysa},
                                                                 {"y_ca", yca},
                                                                 {"x", x},
                                                                 {"fuse.weight", conv->weight},
                                                                 {"fuse.bias", conv->bias}},
                                          GradFunction([=] { return satab::fuse_attention(ysa, yca, *conv, x); })};
                     }});
    cases.push_back({"patch_window_attention", [](Rng& rng) {
                         auto x = rand_tensor(rng, {4, 6, 6});
                         const auto layout = satab::make_window_layout(6, 6, 4, 3);
                         auto params = std::make_shared<satab::MhsaParams<T>>(4, 2, rng);
                         auto reg = std::make_shared<ParamRegistry<T>>();
                         params->register_params(*reg, "mhsa");
                         auto inputs = registry_inputs(*reg);
                         inputs.push_back({"x", x});
                         return std::pair{inputs, GradFunction([=] {
                                              (void)reg;
                                              return satab::patch_window_attention(x, layout, *params);
                                          })};
                     }});
    cases.push_back({"satab_block", [](Rng& rng) {
                         satab::SatabConfig cfg{4, 2, 4, 4, 2, 2, 2, 0.9};
                         auto block = std::make_shared<satab::Satab<T>>(cfg, rng);
                         auto x = rand_tensor(rng, {4, 4, 4});
                         auto reg = std::make_shared<ParamRegistry<T>>();
                         block->register_params(*reg, "satab");
                         auto inputs = registry_inputs(*reg);
                         inputs.push_back({"x", x});
                         return std::pair{inputs, GradFunction([=] {
                                              (void)reg;
                                              return block->forward(x, false);
                                          })};
                     }});
    cases.push_back({"sffb", [](Rng& rng) {
                         auto block = std::make_shared<model::Sffb<T>>(3, rng);
                         auto x = rand_tensor(rng, {3, 4, 4});
                         auto reg = std::make_shared<ParamRegistry<T>>();
                         block->register_params(*reg, "sffb");
                         auto inputs = registry_inputs(*reg);
                         inputs.push_back({"x", x});
                         return std::pair{inputs, GradFunction([=] {
                                              (void)reg;
                                              return block->forward(x);
                                          })};
                     }});
    cases.push_back({"dswm", [](Rng& rng) {
                         auto module = std::make_shared<warp::Dswm<T>>(3, true, rng);
                         // Non-zero predictor output so samples fall between pixels.
                         for (auto& v : module->params().predict3.weight.mutable_data())
                             v = rng.uniform(-0.5, 0.5);
                         for (auto& v : module->params().predict3.bias.mutable_data())
                             v = rng.uniform(0.1, 0.4);
                         auto tar = rand_tensor(rng, {1, 6, 6}, 0, 1), ref = rand_tensor(rng, {1, 6, 6}, 0, 1);
                         auto reg = std::make_shared<ParamRegistry<T>>();
                         module->register_params(*reg, "dswm");
                         auto inputs = registry_inputs(*reg);
                         inputs.push_back({"tar_lr", tar});
                         inputs.push_back({"ref_hr", ref});
                         return std::pair{inputs, GradFunction([=] {
                                              (void)reg;
                                              return module->forward(tar, ref).features;
                                          })};
                     }});
    if (include_model) {
        cases.push_back({"sscm_tiny", [](Rng& rng) {
                             const auto cfg = model::preset("tiny");
                             auto net = std::make_shared<model::SscmModel<T>>(cfg, rng.next());
                             // Fill the zero-initialised layers so every parameter
                             // receives a gradient.
                             for (const auto& e : net->params().entries()) {
                                 if (!e.trainable)
                                     continue;
                                 auto t = e.tensor;
                                 const bool zero = std::all_of(t.data().begin(), t.data().end(),
                                                               [](T v) { return v == 0; });
                                 if (zero)
                                     for (auto& v : t.mutable_data())
                                         v = rng.uniform(-0.3, 0.3);
                             }
                             auto tar = rand_tensor(rng, {1, cfg.height, cfg.width}, 0, 1);
                             auto ref = rand_tensor(rng, {1, cfg.height, cfg.width}, 0, 1);
                             auto inputs = registry_inputs(net->params());
                             inputs.push_back({"tar_lr", tar});
                             inputs.push_back({"ref_hr", ref});
                             return std::pair{inputs, GradFunction([=] { return net->forward(tar, ref); })};
                         }});
    }
    return cases;
}

// FNV-1a, so case inputs do not depend on the standard library's hash.
std::uint64_t name_hash(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s)
        h = (h ^ c) * 1099511628211ULL;
    return h;
}

} // namespace

GradcheckReport run_gradcheck_suite(const GradcheckOptions& options)
{
    const auto start = std::chrono::steady_clock::now();
    GradcheckReport report;
    report.tolerance = options.tolerance;
    for (const auto& c : suite_cases(options.include_model)) {
        if (!options.only.empty() && c.name.find(options.only) == std::string::npos)
            continue;
        GradcheckReport::Entry entry{c.name, 0, "", true};
        for (auto seed : options.seeds) {
            Rng rng(seed * 7919 + name_hash(c.name));
            auto [inputs, fn] = c.make(rng);
            const auto r = check_gradients(c.name, inputs, fn, seed);
            if (r.max_rel_error >= entry.max_rel_error) {
                entry.max_rel_error = r.max_rel_error;
                entry.worst_input = r.worst_input + " seed " + std::to_string(seed);
            }
        }
        entry.passed = entry.max_rel_error <= options.tolerance;
        report.entries.push_back(std::move(entry));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace sscm::train
