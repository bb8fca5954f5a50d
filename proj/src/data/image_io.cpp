#include "data/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace sscm::data {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is, const std::string& where)
{
    std::string tok;
    while (is) {
        const int c = is.peek();
        if (c == EOF)
            break;
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty())
                break;
            is.get();
            continue;
        }
        tok.push_back(static_cast<char>(is.get()));
    }
    if (tok.empty())
        throw FormatError(where + ": truncated PGM header");
    return tok;
}

std::size_t header_number(std::istream& is, const std::string& where)
{
    const auto tok = header_token(is, where);
    if (!std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw FormatError(where + ": bad PGM header field '" + tok + "'");
    return std::stoul(tok);
}

} // namespace

template <typename T>
Tensor<T> load_pgm(const std::filesystem::path& path)
{
    const auto where = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open " + where);
    if (header_token(is, where) != "P5")
        throw FormatError(where + ": not a binary PGM (P5)");
    const auto w = header_number(is, where);
    const auto h = header_number(is, where);
    const auto maxval = header_number(is, where);
    if (w == 0 || h == 0)
        throw FormatError(where + ": zero image extent");
    if (maxval != 255 && maxval != 65535)
        throw FormatError(where + ": unsupported maxval " + std::to_string(maxval));
    is.get(); // single whitespace before the raster
    const std::size_t bytes = maxval == 255 ? 1 : 2;
    std::vector<unsigned char> raw(w * h * bytes);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw FormatError(where + ": truncated PGM raster");
    std::vector<T> data(w * h);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const unsigned v = bytes == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
        data[i] = static_cast<T>(static_cast<double>(v) / static_cast<double>(maxval));
    }
    return Tensor<T>({1, h, w}, std::move(data));
}

template <typename T>
void save_pgm(const std::filesystem::path& path, const Tensor<T>& image, unsigned maxval)
{
    if (maxval != 255 && maxval != 65535)
        throw ConfigError("pgm: maxval must be 255 or 65535");
    const auto nd = image.ndim();
    if (nd < 2 || (nd == 3 && image.dim(0) != 1) || nd > 3)
        throw ShapeError("pgm: expected [H,W] or [1,H,W], got " + shape_str(image.shape()));
    const auto h = image.dim(nd - 2), w = image.dim(nd - 1);
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write " + path.string());
    os << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
    std::vector<unsigned char> raw;
    raw.reserve(w * h * (maxval == 255 ? 1 : 2));
    for (T v : image.data()) {
        const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::floor(c * maxval + 0.5));
        if (maxval == 255) {
            raw.push_back(static_cast<unsigned char>(q));
        } else {
            raw.push_back(static_cast<unsigned char>(q >> 8));
            raw.push_back(static_cast<unsigned char>(q & 0xFF));
        }
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os)
        throw IoError("write failed for " + path.string());
}

template Tensor<float> load_pgm<float>(const std::filesystem::path&);
template Tensor<double> load_pgm<double>(const std::filesystem::path&);
template void save_pgm<float>(const std::filesystem::path&, const Tensor<float>&, unsigned);
template void save_pgm<double>(const std::filesystem::path&, const Tensor<double>&, unsigned);

} // namespace sscm::data
