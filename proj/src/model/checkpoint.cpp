#include "model/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>

#include "core/ssct.hpp"

namespace sscm::model {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'S', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v)
{
    const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v)
{
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

std::uint32_t get_uint(std::istream& is, int bytes)
{
    unsigned char b[4] = {};
    if (!is.read(reinterpret_cast<char*>(b), bytes))
        throw FormatError("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = bytes - 1; i >= 0; --i)
        v = (v << 8) | b[i];
    return v;
}

struct ConfigField {
    const char* name;
    double (*get)(const ModelConfig&);
    void (*set)(ModelConfig&, double);
};

#define SSCM_SIZE_FIELD(f)                                                                                             \
    ConfigField{#f, [](const ModelConfig& c) { return static_cast<double>(c.f); },                                     \
                [](ModelConfig& c, double v) { c.f = static_cast<std::size_t>(v); }}
#define SSCM_BOOL_FIELD(f)                                                                                             \
    ConfigField{#f, [](const ModelConfig& c) { return c.f ? 1.0 : 0.0; }, [](ModelConfig& c, double v) { c.f = v != 0; }}

const std::array<ConfigField, 14>& config_fields()
{
    static const std::array<ConfigField, 14> fields{
        SSCM_SIZE_FIELD(channels),      SSCM_SIZE_FIELD(num_blocks), SSCM_SIZE_FIELD(prototypes),
        SSCM_SIZE_FIELD(sub_group),     SSCM_SIZE_FIELD(window),     SSCM_SIZE_FIELD(window_stride),
        SSCM_SIZE_FIELD(heads),         SSCM_SIZE_FIELD(ffn_expansion), SSCM_BOOL_FIELD(use_dswm),
        SSCM_BOOL_FIELD(use_satab),     SSCM_BOOL_FIELD(use_sffb),   SSCM_SIZE_FIELD(height),
        SSCM_SIZE_FIELD(width),
        ConfigField{"ema_decay", [](const ModelConfig& c) { return c.ema_decay; },
                    [](ModelConfig& c, double v) { c.ema_decay = v; }},
    };
    return fields;
}

} // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    os.put(static_cast<char>(kVersion));
    put_u32(os, static_cast<std::uint32_t>(archive.size()));
    for (const auto& e : archive) {
        if (e.name.size() > 0xFFFF)
            throw FormatError("checkpoint: entry name too long");
        put_u16(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        std::visit([&](const auto& t) { write_ssct(os, t); }, e.tensor);
    }
    if (!os)
        throw IoError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open " + path.string());
    std::array<char, 4> magic;
    if (!is.read(magic.data(), magic.size()) || magic != kMagic)
        throw FormatError(path.string() + " is not a checkpoint (bad magic)");
    if (get_uint(is, 1) != kVersion)
        throw FormatError("checkpoint: unsupported version");
    const auto count = get_uint(is, 4);
    Archive archive;
    archive.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get_uint(is, 2);
        std::string name(len, '\0');
        if (!is.read(name.data(), len))
            throw FormatError("checkpoint: truncated entry name");
        if (peek_ssct_dtype(is) == DType::f32)
            archive.push_back({std::move(name), read_ssct<float>(is)});
        else
            archive.push_back({std::move(name), read_ssct<double>(is)});
    }
    return archive;
}

const ArchiveEntry* find_entry(const Archive& archive, const std::string& name)
{
    for (const auto& e : archive)
        if (e.name == name)
            return &e;
    return nullptr;
}

void append_config(Archive& archive, const ModelConfig& cfg)
{
    for (const auto& f : config_fields())
        archive.push_back({std::string("config.") + f.name, Tensor<double>::scalar(f.get(cfg))});
}

ModelConfig config_from_archive(const Archive& archive)
{
    ModelConfig cfg;
    for (const auto& f : config_fields()) {
        const auto* e = find_entry(archive, std::string("config.") + f.name);
        if (!e)
            throw FormatError(std::string("checkpoint: missing config.") + f.name);
        f.set(cfg, std::visit([](const auto& t) { return static_cast<double>(t.item()); }, e->tensor));
    }
    cfg.validate();
    return cfg;
}

template <typename T>
void append_weights(Archive& archive, const SscmModel<T>& model)
{
    for (const auto& p : model.params().entries())
        archive.push_back({p.name, p.tensor.detach()});
}

template <typename T>
void load_weights(const Archive& archive, SscmModel<T>& model)
{
    for (const auto& p : model.params().entries()) {
        const auto* e = find_entry(archive, p.name);
        if (!e)
            throw FormatError("checkpoint: missing tensor " + p.name);
        std::visit(
            [&](const auto& src) {
                if (src.shape() != p.tensor.shape())
                    throw FormatError("checkpoint: " + p.name + " has shape " + shape_str(src.shape()) +
                                      ", model expects " + shape_str(p.tensor.shape()));
                auto dst = Tensor<T>(p.tensor).mutable_data();
                std::transform(src.data().begin(), src.data().end(), dst.begin(),
                               [](auto v) { return static_cast<T>(v); });
            },
            e->tensor);
    }
}

template <typename T>
void save_model(const std::filesystem::path& path, const SscmModel<T>& model)
{
    Archive archive;
    append_config(archive, model.config());
    append_weights(archive, model);
    write_archive(path, archive);
}

template <typename T>
std::unique_ptr<SscmModel<T>> load_model(const std::filesystem::path& path)
{
    auto archive = read_archive(path);
    auto model = std::make_unique<SscmModel<T>>(config_from_archive(archive), 0);
    load_weights(archive, *model);
    return model;
}

template void append_weights<float>(Archive&, const SscmModel<float>&);
template void append_weights<double>(Archive&, const SscmModel<double>&);
template void load_weights<float>(const Archive&, SscmModel<float>&);
template void load_weights<double>(const Archive&, SscmModel<double>&);
template void save_model<float>(const std::filesystem::path&, const SscmModel<float>&);
template void save_model<double>(const std::filesystem::path&, const SscmModel<double>&);
template std::unique_ptr<SscmModel<float>> load_model<float>(const std::filesystem::path&);
template std::unique_ptr<SscmModel<double>> load_model<double>(const std::filesystem::path&);

} // namespace sscm::model
