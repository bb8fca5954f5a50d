#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "core/random.hpp"
#include "core/tensor.hpp"

namespace testutil {

template <typename T>
sscm::Tensor<T> random_tensor(sscm::Rng& rng, sscm::Shape shape, double lo = -1.0, double hi = 1.0)
{
    std::vector<T> v(sscm::shape_numel(shape));
    for (auto& x : v)
        x = static_cast<T>(rng.uniform(lo, hi));
    return sscm::Tensor<T>(std::move(shape), std::move(v));
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
bool bitwise_equal(const sscm::Tensor<T>& a, const sscm::Tensor<T>& b)
{
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

inline std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("sscm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_bytes(const std::filesystem::path& p)
{
    std::FILE* f = std::fopen(p.c_str(), "rb");
    if (!f)
        return {};
    std::string s;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0)
        s.append(buf, n);
    std::fclose(f);
    return s;
}

} // namespace testutil
