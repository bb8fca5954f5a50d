#include "data/phantom.hpp"

#include <cmath>
#include <numbers>

#include "core/random.hpp"
#include "data/degrade.hpp"

namespace sscm::data {

namespace {

struct Ellipse {
    double cx, cy, ax, ay, angle;
    std::size_t tissue;

    bool contains(double x, double y) const
    {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
        return u * u + v * v <= 1.0;
    }
};

std::vector<Ellipse> draw_scene(const PhantomSpec& spec, Rng& rng)
{
    if (spec.max_ellipses < spec.min_ellipses)
        throw ConfigError("phantom: max_ellipses < min_ellipses");
    if (spec.target_intensity.size() != spec.reference_intensity.size() || spec.target_intensity.empty())
        throw ConfigError("phantom: intensity maps must be non-empty and of equal length");
    const auto count = spec.min_ellipses + rng.index(spec.max_ellipses - spec.min_ellipses + 1);
    const auto tissues = spec.target_intensity.size();
    std::vector<Ellipse> scene;
    for (std::size_t i = 0; i < count; ++i) {
        if (i == 0) {
            scene.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.68, 0.82),
                             rng.uniform(0.78, 0.9), rng.uniform(-0.2, 0.2), 0});
            continue;
        }
        const double r = 0.5 * std::sqrt(rng.uniform());
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const auto tissue = tissues > 1 ? 1 + rng.index(tissues - 1) : 0;
        scene.push_back({r * std::cos(phi), r * std::sin(phi), rng.uniform(0.08, 0.32), rng.uniform(0.08, 0.32),
                         rng.uniform(0.0, std::numbers::pi), tissue});
    }
    return scene;
}

// 2x2 supersampled rendering; later ellipses paint over earlier ones.
template <typename T>
Tensor<T> render(const std::vector<Ellipse>& scene, const std::vector<double>& intensity, std::size_t n,
                 double shift_x, double shift_y)
{
    std::vector<T> img(n * n, T(0));
    const double half = static_cast<double>(n) / 2.0;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0;
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double px = (static_cast<double>(x) + 0.25 + 0.5 * sx - shift_x - half) / half;
                    const double py = (static_cast<double>(y) + 0.25 + 0.5 * sy - shift_y - half) / half;
                    double v = 0;
                    for (const auto& e : scene)
                        if (e.contains(px, py))
                            v = intensity[e.tissue];
                    acc += v;
                }
            }
            img[y * n + x] = static_cast<T>(acc / 4.0);
        }
    }
    return Tensor<T>({1, n, n}, std::move(img));
}

} // namespace

template <typename T>
ImagePair<T> generate_phantom_pair(const PhantomSpec& spec)
{
    if (spec.size == 0)
        throw ConfigError("phantom: size must be positive");
    Rng rng(spec.seed);
    const auto scene = draw_scene(spec, rng);
    ImagePair<T> pair;
    pair.tar_hr = render<T>(scene, spec.target_intensity, spec.size, 0.0, 0.0);
    pair.ref_hr = render<T>(scene, spec.reference_intensity, spec.size, spec.offset[0], spec.offset[1]);
    pair.tar_lr = degrade_kspace(pair.tar_hr, spec.scale);
    pair.scale = spec.scale;
    return pair;
}

template <typename T>
std::vector<ImagePair<T>> generate_phantom_set(const PhantomSpec& spec, std::size_t count)
{
    std::vector<ImagePair<T>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto s = spec;
        s.seed = spec.seed + i;
        out.push_back(generate_phantom_pair<T>(s));
    }
    return out;
}

template ImagePair<float> generate_phantom_pair<float>(const PhantomSpec&);
template ImagePair<double> generate_phantom_pair<double>(const PhantomSpec&);
template std::vector<ImagePair<float>> generate_phantom_set<float>(const PhantomSpec&, std::size_t);
template std::vector<ImagePair<double>> generate_phantom_set<double>(const PhantomSpec&, std::size_t);

} // namespace sscm::data
