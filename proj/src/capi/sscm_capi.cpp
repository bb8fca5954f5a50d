#include "sscm/sscm.h"

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "core/ssct.hpp"
#include "data/degrade.hpp"
#include "data/image_io.hpp"
#include "data/metrics.hpp"
#include "train/experiment.hpp"
#include "train/gradcheck.hpp"

struct sscm_tensor {
    sscm::Tensor<float> t;
};

struct sscm_model {
    std::unique_ptr<sscm::model::SscmModel<float>> net;
};

namespace {

thread_local std::string g_last_error;

sscm_status fail(sscm_status status, const std::string& message)
{
    g_last_error = message;
    return status;
}

template <typename F>
sscm_status guarded(F&& body)
{
    g_last_error.clear();
    try {
        body();
        return SSCM_OK;
    } catch (const sscm::ShapeError& e) {
        return fail(SSCM_ERR_SHAPE, e.what());
    } catch (const sscm::ConfigError& e) {
        return fail(SSCM_ERR_CONFIG, e.what());
    } catch (const sscm::UnsupportedSizeError& e) {
        return fail(SSCM_ERR_UNSUPPORTED_SIZE, e.what());
    } catch (const sscm::IoError& e) {
        return fail(SSCM_ERR_IO, e.what());
    } catch (const sscm::FormatError& e) {
        return fail(SSCM_ERR_FORMAT, e.what());
    } catch (const sscm::TrainingError& e) {
        return fail(SSCM_ERR_NUMERIC, e.what());
    } catch (const sscm::ContractError& e) {
        return fail(SSCM_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::exception& e) {
        return fail(SSCM_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(SSCM_ERR_INTERNAL, "unknown exception");
    }
}

struct NullArgument : sscm::ContractError {
    explicit NullArgument(const char* what) : sscm::ContractError(std::string(what) + " must not be NULL") {}
};

template <typename P>
void need(const P* p, const char* what)
{
    if (!p)
        throw NullArgument(what);
}

char* dup_string(const std::string& s)
{
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out)
        throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

sscm_tensor* wrap(sscm::Tensor<float> t)
{
    return new sscm_tensor{std::move(t)};
}

sscm::train::RunConfig resolve(const char* config_json)
{
    return config_json ? sscm::train::parse_run_config(config_json) : sscm::train::RunConfig{};
}

sscm_metrics to_c(const sscm::data::MetricRow& r)
{
    return {r.psnr_db, r.ssim, r.rmse};
}

} // namespace

extern "C" {

const char* sscm_last_error(void)
{
    return g_last_error.c_str();
}

const char* sscm_status_string(sscm_status status)
{
    switch (status) {
    case SSCM_OK: return "ok";
    case SSCM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SSCM_ERR_SHAPE: return "shape error";
    case SSCM_ERR_CONFIG: return "config error";
    case SSCM_ERR_UNSUPPORTED_SIZE: return "unsupported size";
    case SSCM_ERR_IO: return "I/O error";
    case SSCM_ERR_FORMAT: return "format error";
    case SSCM_ERR_NUMERIC: return "numeric failure";
    case SSCM_ERR_GRADCHECK: return "gradcheck failure";
    case SSCM_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void sscm_string_free(char* s)
{
    std::free(s);
}

sscm_status sscm_tensor_create(const size_t* shape, size_t ndim, const float* data, sscm_tensor** out)
{
    return guarded([&] {
        need(shape, "shape");
        need(data, "data");
        need(out, "out");
        sscm::Shape s(shape, shape + ndim);
        const auto n = sscm::shape_numel(s);
        *out = wrap(sscm::Tensor<float>(std::move(s), std::vector<float>(data, data + n)));
    });
}

sscm_status sscm_tensor_load(const char* path, sscm_tensor** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = wrap(sscm::load_ssct<float>(path));
    });
}

sscm_status sscm_tensor_save(const sscm_tensor* t, const char* path)
{
    return guarded([&] {
        need(t, "tensor");
        need(path, "path");
        sscm::save_ssct(path, t->t);
    });
}

sscm_status sscm_tensor_load_pgm(const char* path, sscm_tensor** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = wrap(sscm::data::load_pgm<float>(path));
    });
}

sscm_status sscm_tensor_save_pgm(const sscm_tensor* t, const char* path, unsigned maxval)
{
    return guarded([&] {
        need(t, "tensor");
        need(path, "path");
        sscm::data::save_pgm(path, t->t, maxval);
    });
}

size_t sscm_tensor_ndim(const sscm_tensor* t)
{
    return t ? t->t.ndim() : 0;
}

size_t sscm_tensor_dim(const sscm_tensor* t, size_t axis)
{
    return t && axis < t->t.ndim() ? t->t.dim(axis) : 0;
}

size_t sscm_tensor_numel(const sscm_tensor* t)
{
    return t ? t->t.numel() : 0;
}

const float* sscm_tensor_data(const sscm_tensor* t)
{
    return t ? t->t.data().data() : nullptr;
}

void sscm_tensor_free(sscm_tensor* t)
{
    delete t;
}

sscm_status sscm_degrade(const sscm_tensor* hr, size_t scale, sscm_tensor** out)
{
    return guarded([&] {
        need(hr, "hr");
        need(out, "out");
        *out = wrap(sscm::data::degrade_kspace(hr->t, scale));
    });
}

sscm_status sscm_psnr(const sscm_tensor* x, const sscm_tensor* y, double max_val, double* out)
{
    return guarded([&] {
        need(x, "x");
        need(y, "y");
        need(out, "out");
        *out = sscm::data::psnr(x->t, y->t, max_val);
    });
}

sscm_status sscm_evaluate(const sscm_tensor* pred, const sscm_tensor* gt, sscm_metrics* out)
{
    return guarded([&] {
        need(pred, "pred");
        need(gt, "gt");
        need(out, "out");
        *out = to_c(sscm::data::evaluate_pair(pred->t, gt->t));
    });
}

sscm_status sscm_make_phantoms(size_t count, size_t size, uint64_t seed, double offset_x, double offset_y,
                               const char* out_dir)
{
    return guarded([&] {
        need(out_dir, "out_dir");
        if (!sscm::spectral::is_power_of_two(size))
            throw sscm::ConfigError("phantom size " + std::to_string(size) + " is not a power of two");
        const std::filesystem::path dir(out_dir);
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
            throw sscm::IoError("cannot create " + dir.string() + ": " + ec.message());
        sscm::data::PhantomSpec spec;
        spec.size = size;
        spec.offset = {offset_x, offset_y};
        spec.scale = 1; // LR is derived later at the requested scale
        for (size_t i = 0; i < count; ++i) {
            spec.seed = seed + i;
            const auto pair = sscm::data::generate_phantom_pair<float>(spec);
            sscm::save_ssct(dir / ("pair_" + std::to_string(i) + "_tar.ssct"), pair.tar_hr);
            sscm::save_ssct(dir / ("pair_" + std::to_string(i) + "_ref.ssct"), pair.ref_hr);
        }
    });
}

sscm_status sscm_config_resolve(const char* config_json, const char* const* overrides, size_t n_overrides,
                                char** resolved_json)
{
    return guarded([&] {
        need(resolved_json, "resolved_json");
        if (n_overrides > 0)
            need(overrides, "overrides");
        auto cfg = resolve(config_json);
        for (size_t i = 0; i < n_overrides; ++i) {
            need(overrides[i], "override");
            sscm::train::apply_override(cfg, overrides[i]);
        }
        sscm::train::apply_seed_env(cfg);
        *resolved_json = dup_string(sscm::train::to_json(cfg));
    });
}

sscm_status sscm_model_create(const char* config_json, sscm_model** out)
{
    return guarded([&] {
        need(out, "out");
        const auto cfg = resolve(config_json);
        *out = new sscm_model{std::make_unique<sscm::model::SscmModel<float>>(cfg.model, cfg.train.seed)};
    });
}

sscm_status sscm_model_load(const char* checkpoint_path, sscm_model** out)
{
    return guarded([&] {
        need(checkpoint_path, "checkpoint_path");
        need(out, "out");
        *out = new sscm_model{sscm::model::load_model<float>(checkpoint_path)};
    });
}

sscm_status sscm_model_save(const sscm_model* model, const char* checkpoint_path)
{
    return guarded([&] {
        need(model, "model");
        need(checkpoint_path, "checkpoint_path");
        sscm::model::save_model(checkpoint_path, *model->net);
    });
}

sscm_status sscm_model_param_count(const sscm_model* model, size_t* out)
{
    return guarded([&] {
        need(model, "model");
        need(out, "out");
        *out = model->net->param_count();
    });
}

sscm_status sscm_infer(sscm_model* model, const sscm_tensor* tar_lr, const sscm_tensor* ref_hr, sscm_tensor** out,
                       sscm_tensor** displacement, sscm_tensor** group_maps)
{
    return guarded([&] {
        need(model, "model");
        need(tar_lr, "tar_lr");
        need(ref_hr, "ref_hr");
        need(out, "out");
        sscm::model::SscmModel<float>::Diagnostics diag;
        auto pred = model->net->predict(tar_lr->t, ref_hr->t, &diag);
        if (displacement)
            *displacement = wrap(diag.displacement.offsets.detach());
        if (group_maps)
            *group_maps = diag.group_maps.empty() ? nullptr : wrap(sscm::concat(diag.group_maps));
        *out = wrap(std::move(pred));
    });
}

void sscm_model_free(sscm_model* model)
{
    delete model;
}

sscm_status sscm_train(const char* config_json, const char* data_dir, const char* out_checkpoint,
                       const char* loss_csv, sscm_progress_fn progress, void* user, sscm_train_summary* summary)
{
    return guarded([&] {
        const auto cfg = resolve(config_json);
        sscm::train::Datasets data;
        if (data_dir) {
            data.train = sscm::train::load_pair_dir(data_dir, cfg.data.scale);
            if (data.train.empty())
                throw sscm::IoError(std::string("no pair_<i>_tar.ssct files in ") + data_dir);
        } else {
            data = sscm::train::make_datasets(cfg.data);
        }
        sscm::train::TrainOutputs outputs;
        if (out_checkpoint)
            outputs.checkpoint = out_checkpoint;
        if (loss_csv)
            outputs.loss_csv = loss_csv;
        if (progress)
            outputs.on_iteration = [&](std::size_t it, double loss) { progress(it, loss, user); };
        const auto r = sscm::train::run_experiment(cfg, data, outputs);
        if (summary) {
            *summary = {};
            summary->iterations = r.training.losses.size();
            summary->initial_loss = r.training.losses.front();
            summary->final_loss = r.training.losses.back();
            summary->seconds = r.seconds;
            summary->has_heldout = data.test.empty() ? 0 : 1;
            if (!data.test.empty()) {
                summary->heldout = to_c(r.model);
                summary->zero_padding = to_c(r.zero_padding);
            }
        }
    });
}

sscm_status sscm_ablate(const char* config_json, const char* data_dir, const char* csv_path, sscm_log_fn log,
                        void* user, int* ordering_ok)
{
    return guarded([&] {
        const auto cfg = resolve(config_json);
        sscm::train::Datasets data = sscm::train::make_datasets(cfg.data);
        if (data_dir) {
            // Directory pairs: the last quarter (at least one) is held out.
            auto pairs = sscm::train::load_pair_dir(data_dir, cfg.data.scale);
            if (pairs.size() < 2)
                throw sscm::ConfigError("ablation needs at least two pairs in the data directory");
            const auto held = std::max<std::size_t>(1, pairs.size() / 4);
            data.test.assign(pairs.end() - static_cast<std::ptrdiff_t>(held), pairs.end());
            pairs.resize(pairs.size() - held);
            data.train = std::move(pairs);
        }
        std::function<void(const std::string&)> logger;
        if (log)
            logger = [&](const std::string& line) { log(line.c_str(), user); };
        const auto rows = sscm::train::run_ablation(cfg, data, logger);
        if (csv_path)
            sscm::train::write_ablation_csv(csv_path, rows);
        const auto order = sscm::train::check_ablation_order(rows);
        if (log) {
            for (const auto& t : order.ties)
                log(("tie within 0.05 dB: " + t).c_str(), user);
            for (const auto& v : order.violations)
                log(("ordering violated: " + v).c_str(), user);
        }
        if (ordering_ok)
            *ordering_ok = order.passed ? 1 : 0;
    });
}

sscm_status sscm_gradcheck(int include_model, char** report)
{
    bool passed = true;
    const auto status = guarded([&] {
        need(report, "report");
        sscm::train::GradcheckOptions options;
        options.include_model = include_model != 0;
        const auto r = sscm::train::run_gradcheck_suite(options);
        *report = dup_string(r.format());
        passed = r.passed();
    });
    if (status != SSCM_OK)
        return status;
    return passed ? SSCM_OK : fail(SSCM_ERR_GRADCHECK, "gradcheck: at least one entry exceeds the tolerance");
}

sscm_status sscm_param_count(const char* config_json, size_t* total, char** breakdown_json)
{
    return guarded([&] {
        need(total, "total");
        using nlohmann::json;
        json doc = json::object();
        if (config_json) {
            try {
                doc = json::parse(config_json);
            } catch (const json::parse_error& e) {
                throw sscm::ConfigError(std::string("config: invalid JSON: ") + e.what());
            }
        }
        json out;
        if (doc.is_object() && doc.contains("conv2d")) {
            if (doc.size() != 1)
                throw sscm::ConfigError("a conv2d fragment must be the only key");
            const auto& c = doc.at("conv2d");
            for (const auto& [key, _] : c.items())
                if (key != "in" && key != "out" && key != "kernel")
                    throw sscm::ConfigError("config: unknown key 'conv2d." + key + "'");
            auto field = [&](const char* k) {
                if (!c.contains(k) || !c.at(k).is_number_unsigned() || c.at(k).get<std::size_t>() == 0)
                    throw sscm::ConfigError(std::string("conv2d.") + k + " must be a positive integer");
                return c.at(k).get<std::size_t>();
            };
            *total = sscm::model::conv_param_count(field("in"), field("out"), field("kernel"));
            out = {{"conv2d", *total}, {"total", *total}};
        } else {
            const auto cfg = resolve(config_json);
            const auto b = sscm::model::analytic_param_count(cfg.model);
            // The instantiated registry must agree with the closed form.
            const sscm::model::SscmModel<float> net(cfg.model, 0);
            if (net.param_count() != b.total)
                throw sscm::ContractError("analytic count " + std::to_string(b.total) + " differs from model " +
                                          std::to_string(net.param_count()));
            *total = b.total;
            out = {{"preset", cfg.preset},
                   {"dswm", b.dswm},
                   {"satab_per_block", b.satab_per_block},
                   {"sffb_per_block", b.sffb_per_block},
                   {"mid_per_block", b.mid_per_block},
                   {"blocks", cfg.model.num_blocks},
                   {"final_conv", b.final_conv},
                   {"total", b.total}};
        }
        if (breakdown_json)
            *breakdown_json = dup_string(out.dump(2));
    });
}

} // extern "C"
