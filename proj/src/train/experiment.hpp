#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "train/run_config.hpp"

namespace sscm::train {

struct Datasets {
    std::vector<data::ImagePair<float>> train, test;
};

// Train pairs use seeds data.seed + i, held-out pairs data.seed + 100000 + i.
Datasets make_datasets(const DataConfig& cfg);

// pair_<i>_tar.ssct / pair_<i>_ref.ssct (HR) from `dir`, degraded at `scale`.
std::vector<data::ImagePair<float>> load_pair_dir(const std::filesystem::path& dir, std::size_t scale);

struct ExperimentResult {
    TrainResult training;
    data::MetricRow model;        // held-out, trained model
    data::MetricRow zero_padding; // held-out, LR input itself
    double seconds = 0;
};

/// Builds the model from cfg (seeded by train.seed), trains on the train
/// split and evaluates on the held-out split.
ExperimentResult run_experiment(const RunConfig& cfg, const Datasets& data, const TrainOutputs& outputs = {});

struct AblationVariant {
    bool dswm, satab, sffb;
};

// The five flag combinations of the component ablation, baseline first and
// the full model last.
const std::vector<AblationVariant>& ablation_variants();

struct AblationRow {
    AblationVariant variant;
    std::vector<double> psnr, ssim; // per seed
    double mean_psnr = 0, mean_ssim = 0;
};

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Datasets& data,
                                      const std::function<void(const std::string&)>& log = {});

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

struct OrderingCheck {
    bool passed = true;
    std::vector<std::string> violations; // beyond tolerance
    std::vector<std::string> ties;       // within tolerance, reported only
};

// full >= every single-removal row >= baseline, with `tolerance` dB slack.
OrderingCheck check_ablation_order(const std::vector<AblationRow>& rows, double tolerance = 0.05);

} // namespace sscm::train
