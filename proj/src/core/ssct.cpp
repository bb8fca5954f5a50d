#include "core/ssct.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace sscm {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'S', 'C', 'T'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U value)
{
    std::array<char, sizeof(U)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(U));
}

template <typename U>
U get_le(std::istream& is)
{
    std::array<char, sizeof(U)> bytes;
    if (!is.read(bytes.data(), sizeof(U)))
        throw FormatError("SSCT: truncated stream");
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes.begin(), bytes.end());
    U value;
    std::memcpy(&value, bytes.data(), sizeof(U));
    return value;
}

template <typename T, typename Stored>
std::vector<T> read_values(std::istream& is, std::size_t n)
{
    std::vector<T> out(n);
    for (auto& v : out)
        v = static_cast<T>(get_le<Stored>(is));
    return out;
}

} // namespace

template <typename T>
void write_ssct(std::ostream& os, const Tensor<T>& t)
{
    if (t.ndim() > 255)
        throw FormatError("SSCT: rank too large");
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint8_t>(os, kVersion);
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(Tensor<T>::dtype));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
    for (auto e : t.shape()) {
        if (e > 0xFFFFFFFFu)
            throw FormatError("SSCT: extent exceeds u32");
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    }
    for (T v : t.data())
        put_le<T>(os, v);
    if (!os)
        throw IoError("SSCT: write failed");
}

DType peek_ssct_dtype(std::istream& is)
{
    const auto pos = is.tellg();
    std::array<char, 6> head;
    if (!is.read(head.data(), head.size()))
        throw FormatError("SSCT: truncated header");
    is.seekg(pos);
    if (!std::equal(kMagic.begin(), kMagic.end(), head.begin()))
        throw FormatError("SSCT: bad magic");
    if (head[5] > 1)
        throw FormatError("SSCT: unknown dtype code");
    return static_cast<DType>(head[5]);
}

template <typename T>
Tensor<T> read_ssct(std::istream& is)
{
    std::array<char, 4> magic;
    if (!is.read(magic.data(), magic.size()) || magic != kMagic)
        throw FormatError("SSCT: bad magic");
    if (get_le<std::uint8_t>(is) != kVersion)
        throw FormatError("SSCT: unsupported version");
    const auto dtype = get_le<std::uint8_t>(is);
    const auto ndim = get_le<std::uint8_t>(is);
    Shape shape(ndim);
    for (auto& e : shape) {
        e = get_le<std::uint32_t>(is);
        if (e == 0)
            throw FormatError("SSCT: zero extent");
    }
    const auto n = shape_numel(shape);
    switch (dtype) {
    case 0:
        return Tensor<T>(std::move(shape), read_values<T, float>(is, n));
    case 1:
        return Tensor<T>(std::move(shape), read_values<T, double>(is, n));
    default:
        throw FormatError("SSCT: unknown dtype code " + std::to_string(dtype));
    }
}

template <typename T>
void save_ssct(const std::filesystem::path& path, const Tensor<T>& t)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path.string() + " for writing");
    write_ssct(os, t);
}

template <typename T>
Tensor<T> load_ssct(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open " + path.string());
    return read_ssct<T>(is);
}

template void write_ssct<float>(std::ostream&, const Tensor<float>&);
template void write_ssct<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_ssct<float>(std::istream&);
template Tensor<double> read_ssct<double>(std::istream&);
template void save_ssct<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_ssct<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_ssct<float>(const std::filesystem::path&);
template Tensor<double> load_ssct<double>(const std::filesystem::path&);

} // namespace sscm
