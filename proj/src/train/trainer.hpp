#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "data/metrics.hpp"
#include "data/phantom.hpp"
#include "model/checkpoint.hpp"
#include "train/adam.hpp"

namespace sscm::train {

struct TrainConfig {
    double lr = 2e-4;
    std::size_t iterations = 2000;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    // Write a checkpoint every N iterations (0: only at the end).
    std::size_t checkpoint_every = 0;
    // Only "constant" is implemented.
    std::string lr_schedule = "constant";

    void validate() const;
};

struct TrainOutputs {
    std::filesystem::path checkpoint;  // empty: no checkpoint files
    std::filesystem::path loss_csv;    // empty: no trace file
    std::function<void(std::size_t iter, double loss)> on_iteration;
};

struct TrainResult {
    std::vector<double> losses; // per iteration, batch mean L1
};

/// Mean L1 over `batch` with gradients, then one Adam step and the queued
/// prototype EMA updates. Returns the loss. Throws TrainingError on a
/// non-finite loss or gradient.
template <typename T>
double train_step(model::SscmModel<T>& model, const std::vector<const data::ImagePair<T>*>& batch,
                  AdamState<T>& state, const AdamConfig& adam);

/// Seeded-shuffle training loop. Batches are consecutive slices of a
/// per-epoch permutation drawn from cfg.seed.
template <typename T>
TrainResult train(model::SscmModel<T>& model, const std::vector<data::ImagePair<T>>& dataset, const TrainConfig& cfg,
                  AdamState<T>& state, const TrainOutputs& outputs = {});

// Model archive plus "optim.step", "optim.m.<name>" and "optim.v.<name>".
template <typename T>
void save_training_checkpoint(const std::filesystem::path& path, const model::SscmModel<T>& model,
                              const AdamState<T>& state);
template <typename T>
AdamState<T> load_optimizer_state(const model::Archive& archive);

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses);

// Mean metrics of the model's clamped predictions over `pairs`.
template <typename T>
data::MetricRow evaluate_model(model::SscmModel<T>& model, const std::vector<data::ImagePair<T>>& pairs);
// Mean metrics of the zero-padded inputs themselves.
template <typename T>
data::MetricRow evaluate_zero_padding(const std::vector<data::ImagePair<T>>& pairs);

} // namespace sscm::train
