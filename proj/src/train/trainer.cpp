#include "train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sscm::train {

void TrainConfig::validate() const
{
    if (!(lr > 0))
        throw ConfigError("train.lr must be positive");
    if (iterations == 0)
        throw ConfigError("train.iterations must be at least 1");
    if (batch_size == 0)
        throw ConfigError("train.batch_size must be at least 1");
    if (lr_schedule != "constant")
        throw ConfigError("train.lr_schedule '" + lr_schedule + "' is not supported (only constant)");
}

template <typename T>
double train_step(model::SscmModel<T>& model, const std::vector<const data::ImagePair<T>*>& batch,
                  AdamState<T>& state, const AdamConfig& adam)
{
    if (batch.empty())
        throw ContractError("train_step: empty batch");
    model.set_training(true);
    model.params().zero_grad();
    Tape<T> tape;
    Tensor<T> loss;
    {
        TapeScope<T> scope(tape);
        for (const auto* pair : batch) {
            auto l = l1_loss(model.forward(pair->tar_lr, pair->ref_hr), pair->tar_hr);
            loss = loss.defined() ? add(loss, l) : l;
        }
        if (batch.size() > 1)
            loss = scale(loss, static_cast<T>(1.0 / static_cast<double>(batch.size())));
    }
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value))
        throw TrainingError("non-finite loss at step " + std::to_string(state.step + 1));
    backward(loss, tape);
    adam_step(model.params(), state, adam);
    model.apply_pending_ema();
    return value;
}

template <typename T>
TrainResult train(model::SscmModel<T>& model, const std::vector<data::ImagePair<T>>& dataset, const TrainConfig& cfg,
                  AdamState<T>& state, const TrainOutputs& outputs)
{
    cfg.validate();
    if (dataset.empty())
        throw ConfigError("train: dataset is empty");
    const AdamConfig adam{cfg.lr};
    Rng rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_index = [&] {
        if (cursor == order.size()) {
            order.resize(dataset.size());
            for (std::size_t i = 0; i < order.size(); ++i)
                order[i] = i;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.index(i)]);
            cursor = 0;
        }
        return order[cursor++];
    };

    TrainResult result;
    result.losses.reserve(cfg.iterations);
    std::vector<const data::ImagePair<T>*> batch;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        batch.clear();
        for (std::size_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(&dataset[next_index()]);
        const double loss = train_step(model, batch, state, adam);
        result.losses.push_back(loss);
        if (outputs.on_iteration)
            outputs.on_iteration(it, loss);
        if (!outputs.checkpoint.empty() && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 &&
            it != cfg.iterations) {
            auto path = outputs.checkpoint;
            path += "." + std::to_string(it);
            save_training_checkpoint(path, model, state);
        }
    }
    model.set_training(false);
    if (!outputs.checkpoint.empty())
        save_training_checkpoint(outputs.checkpoint, model, state);
    if (!outputs.loss_csv.empty())
        write_loss_csv(outputs.loss_csv, result.losses);
    return result;
}

template <typename T>
void save_training_checkpoint(const std::filesystem::path& path, const model::SscmModel<T>& model,
                              const AdamState<T>& state)
{
    model::Archive archive;
    model::append_config(archive, model.config());
    model::append_weights(archive, model);
    archive.push_back({"optim.step", Tensor<double>::scalar(static_cast<double>(state.step))});
    for (const auto& [name, m] : state.m)
        archive.push_back({"optim.m." + name, Tensor<T>({m.size()}, m)});
    for (const auto& [name, v] : state.v)
        archive.push_back({"optim.v." + name, Tensor<T>({v.size()}, v)});
    model::write_archive(path, archive);
}

template <typename T>
AdamState<T> load_optimizer_state(const model::Archive& archive)
{
    AdamState<T> state;
    auto to_vec = [](const model::ArchiveEntry& e) {
        return std::visit(
            [](const auto& t) {
                std::vector<T> out(t.numel());
                for (std::size_t i = 0; i < out.size(); ++i)
                    out[i] = static_cast<T>(t.data()[i]);
                return out;
            },
            e.tensor);
    };
    for (const auto& e : archive) {
        if (e.name == "optim.step")
            state.step = static_cast<std::size_t>(to_vec(e).at(0));
        else if (e.name.rfind("optim.m.", 0) == 0)
            state.m[e.name.substr(8)] = to_vec(e);
        else if (e.name.rfind("optim.v.", 0) == 0)
            state.v[e.name.substr(8)] = to_vec(e);
    }
    return state;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses)
{
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write " + path.string());
    os << "iter,l1_loss\n";
    char buf[64];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9e\n", i + 1, losses[i]);
        os << buf;
    }
    if (!os)
        throw IoError("write failed for " + path.string());
}

namespace {
data::MetricRow mean_rows(const std::vector<data::MetricRow>& rows)
{
    data::MetricRow m;
    for (const auto& r : rows) {
        m.psnr_db += r.psnr_db;
        m.ssim += r.ssim;
        m.rmse += r.rmse;
    }
    const double n = static_cast<double>(rows.size());
    m.psnr_db /= n;
    m.ssim /= n;
    m.rmse /= n;
    return m;
}
} // namespace

template <typename T>
data::MetricRow evaluate_model(model::SscmModel<T>& model, const std::vector<data::ImagePair<T>>& pairs)
{
    if (pairs.empty())
        throw ConfigError("evaluate: no pairs");
    std::vector<data::MetricRow> rows;
    for (const auto& p : pairs)
        rows.push_back(data::evaluate_pair(model.predict(p.tar_lr, p.ref_hr), p.tar_hr));
    return mean_rows(rows);
}

template <typename T>
data::MetricRow evaluate_zero_padding(const std::vector<data::ImagePair<T>>& pairs)
{
    if (pairs.empty())
        throw ConfigError("evaluate: no pairs");
    std::vector<data::MetricRow> rows;
    for (const auto& p : pairs)
        rows.push_back(data::evaluate_pair(p.tar_lr, p.tar_hr));
    return mean_rows(rows);
}

#define SSCM_INSTANTIATE_TRAINER(T)                                                                                    \
    template double train_step<T>(model::SscmModel<T>&, const std::vector<const data::ImagePair<T>*>&,                 \
                                  AdamState<T>&, const AdamConfig&);                                                   \
    template TrainResult train<T>(model::SscmModel<T>&, const std::vector<data::ImagePair<T>>&, const TrainConfig&,    \
                                  AdamState<T>&, const TrainOutputs&);                                                 \
    template void save_training_checkpoint<T>(const std::filesystem::path&, const model::SscmModel<T>&,                \
                                              const AdamState<T>&);                                                    \
    template AdamState<T> load_optimizer_state<T>(const model::Archive&);                                              \
    template data::MetricRow evaluate_model<T>(model::SscmModel<T>&, const std::vector<data::ImagePair<T>>&);          \
    template data::MetricRow evaluate_zero_padding<T>(const std::vector<data::ImagePair<T>>&);

SSCM_INSTANTIATE_TRAINER(float)
SSCM_INSTANTIATE_TRAINER(double)

} // namespace sscm::train
