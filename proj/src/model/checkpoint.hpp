#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "model/sscm.hpp"

// Checkpoint archive: "SSCK", version u8 = 1, entry count u32, then per entry
// a u16 name length, the UTF-8 name and one SSCT blob.

namespace sscm::model {

struct ArchiveEntry {
    std::string name;
    std::variant<Tensor<float>, Tensor<double>> tensor;
};

using Archive = std::vector<ArchiveEntry>;

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

const ArchiveEntry* find_entry(const Archive& archive, const std::string& name);

// Config fields stored as f64 scalars under "config.<field>".
void append_config(Archive& archive, const ModelConfig& cfg);
ModelConfig config_from_archive(const Archive& archive);

// Weights and prototypes under their registry names.
template <typename T>
void append_weights(Archive& archive, const SscmModel<T>& model);
template <typename T>
void load_weights(const Archive& archive, SscmModel<T>& model);

template <typename T>
void save_model(const std::filesystem::path& path, const SscmModel<T>& model);
template <typename T>
std::unique_ptr<SscmModel<T>> load_model(const std::filesystem::path& path);

} // namespace sscm::model
