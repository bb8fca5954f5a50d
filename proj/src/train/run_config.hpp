#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "model/config.hpp"
#include "train/trainer.hpp"

namespace sscm::train {

// Synthetic phantom data used by train/ablate when no directory is given.
struct DataConfig {
    std::size_t train_pairs = 8;
    std::size_t test_pairs = 4;
    std::size_t size = 64;
    std::size_t scale = 4;
    std::uint64_t seed = 1234;
    double offset_x = 2.0;
    double offset_y = 1.0;
    std::size_t min_ellipses = 4;
    std::size_t max_ellipses = 8;
};

/// Fully resolved run configuration. The image grid of the model always
/// follows data.size.
struct RunConfig {
    std::string preset = "desk";
    model::ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::vector<std::uint64_t> ablation_seeds{1, 2, 3};

    void validate() const;
};

/// Parses {"preset", "model", "train", "data", "ablation"}; every section is
/// optional and unknown keys raise ConfigError. The preset is applied first,
/// explicit model keys override it.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// "section.key=value", e.g. "train.iterations=200" or "preset=tiny".
void apply_override(RunConfig& cfg, const std::string& assignment);
// SSCM_SEED, when set, replaces train.seed.
void apply_seed_env(RunConfig& cfg);

std::string to_json(const RunConfig& cfg);

} // namespace sscm::train
