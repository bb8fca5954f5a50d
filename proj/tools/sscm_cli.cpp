// Command-line front end; everything goes through the C API.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sscm/sscm.h"

namespace {

enum Exit { kOk = 0, kBadArgs = 2, kIo = 3, kNumeric = 4, kGradcheck = 5 };

struct Failure {
    int code;
};

int exit_code(sscm_status s)
{
    switch (s) {
    case SSCM_OK: return kOk;
    case SSCM_ERR_IO:
    case SSCM_ERR_FORMAT: return kIo;
    case SSCM_ERR_NUMERIC: return kNumeric;
    case SSCM_ERR_GRADCHECK: return kGradcheck;
    case SSCM_ERR_INTERNAL: return 1;
    default: return kBadArgs;
    }
}

void check(sscm_status s)
{
    if (s == SSCM_OK)
        return;
    std::cerr << "error: " << sscm_status_string(s) << ": " << sscm_last_error() << '\n';
    throw Failure{exit_code(s)};
}

std::string fmt(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct Owned {
    char* s = nullptr;
    ~Owned() { sscm_string_free(s); }
    std::string str() const { return s ? s : ""; }
};

struct TensorPtr {
    sscm_tensor* t = nullptr;
    ~TensorPtr() { sscm_tensor_free(t); }
};

struct ModelPtr {
    sscm_model* m = nullptr;
    ~ModelPtr() { sscm_model_free(m); }
};

std::string read_text(const std::string& path)
{
    std::ifstream is(path);
    if (!is) {
        std::cerr << "error: cannot open " << path << '\n';
        throw Failure{kIo};
    }
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Config file (optional) + overrides + SSCM_SEED, echoed to stderr.
std::string resolve_config(const std::string& path, const std::vector<std::string>& overrides)
{
    const std::string text = path.empty() ? std::string() : read_text(path);
    std::vector<const char*> ptrs;
    for (const auto& o : overrides)
        ptrs.push_back(o.c_str());
    Owned out;
    check(sscm_config_resolve(path.empty() ? nullptr : text.c_str(), ptrs.data(), ptrs.size(), &out.s));
    std::cerr << "resolved config:\n" << out.str() << '\n';
    return out.str();
}

void progress(size_t it, double loss, void*)
{
    if (it == 1 || it % 100 == 0)
        std::fprintf(stderr, "iter %zu l1 %.6f\n", it, loss);
}

void log_line(const char* line, void*)
{
    std::fprintf(stderr, "%s\n", line);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Reference-guided multi-contrast MRI super-resolution"};
    app.require_subcommand(1);

    // make-phantoms
    auto* mk = app.add_subcommand("make-phantoms", "Write synthetic target/reference HR pairs");
    std::size_t mk_count = 8, mk_size = 64;
    std::uint64_t mk_seed = 0;
    std::vector<double> mk_offset{2.0, 1.0};
    std::string mk_out;
    mk->add_option("--count", mk_count, "Number of pairs")->capture_default_str();
    mk->add_option("--size", mk_size, "Image extent (power of two)")->capture_default_str();
    mk->add_option("--seed", mk_seed, "Seed of pair 0")->capture_default_str();
    mk->add_option("--offset", mk_offset, "Reference shift in pixels: dx dy")->expected(2)->capture_default_str();
    mk->add_option("--out-dir", mk_out, "Output directory")->required();

    // degrade
    auto* dg = app.add_subcommand("degrade", "k-space crop + zero padding");
    std::string dg_in, dg_out;
    std::size_t dg_scale = 4;
    dg->add_option("--input", dg_in, "HR tensor (.ssct)")->required();
    dg->add_option("--scale", dg_scale, "Downsampling factor")->capture_default_str();
    dg->add_option("--out", dg_out, "LR tensor (.ssct)")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_cfg, tr_data, tr_ckpt, tr_csv;
    std::vector<std::string> tr_set;
    tr->add_option("--config", tr_cfg, "Run config (JSON)");
    tr->add_option("--data-dir", tr_data, "Directory of pair_<i>_{tar,ref}.ssct; synthetic split when omitted");
    tr->add_option("--out-ckpt", tr_ckpt, "Checkpoint path")->required();
    tr->add_option("--loss-csv", tr_csv, "Loss trace (default <out-ckpt>.loss.csv)");
    tr->add_option("--set", tr_set, "Override, e.g. train.iterations=200");

    // infer
    auto* inf = app.add_subcommand("infer", "Run a checkpoint on one pair");
    std::string inf_ckpt, inf_lr, inf_ref, inf_out, inf_preview, inf_disp, inf_groups;
    inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
    inf->add_option("--tar-lr", inf_lr, "Zero-padded target (.ssct)")->required();
    inf->add_option("--ref-hr", inf_ref, "Reference (.ssct)")->required();
    inf->add_option("--out", inf_out, "Prediction (.ssct)")->required();
    inf->add_option("--preview", inf_preview, "Optional PGM preview");
    inf->add_option("--displacement", inf_disp, "Optional displacement dump [2,H,W] (.ssct)");
    inf->add_option("--group-maps", inf_groups, "Optional group-id maps [blocks,H,W] (.ssct)");

    // eval
    auto* ev = app.add_subcommand("eval", "Append PSNR/SSIM/RMSE rows");
    std::vector<std::string> ev_pred, ev_gt;
    std::string ev_csv;
    ev->add_option("--pred", ev_pred, "Prediction tensors")->required();
    ev->add_option("--gt", ev_gt, "Ground-truth tensors, same order")->required();
    ev->add_option("--csv", ev_csv, "Report to append to")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "Five-row component ablation");
    std::string ab_cfg, ab_data, ab_csv;
    std::vector<std::string> ab_set;
    ab->add_option("--config", ab_cfg, "Run config (JSON)");
    ab->add_option("--data-dir", ab_data, "Pair directory; synthetic split when omitted");
    ab->add_option("--csv", ab_csv, "Output CSV")->required();
    ab->add_option("--set", ab_set, "Override");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    bool gc_no_model = false;
    gc->add_flag("--no-model", gc_no_model, "Skip the tiny end-to-end model");

    // param-count
    auto* pc = app.add_subcommand("param-count", "Parameter count with per-module breakdown");
    std::string pc_cfg, pc_preset;
    std::vector<std::string> pc_set;
    pc->add_option("--config", pc_cfg, "Run config or {\"conv2d\": {...}} fragment");
    pc->add_option("--preset", pc_preset, "desk, tiny or paper");
    pc->add_option("--set", pc_set, "Override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kBadArgs;
    }

    try {
        if (*mk) {
            check(sscm_make_phantoms(mk_count, mk_size, mk_seed, mk_offset[0], mk_offset[1], mk_out.c_str()));
            std::cout << "wrote " << 2 * mk_count << " files to " << mk_out << '\n';
        } else if (*dg) {
            TensorPtr hr, lr;
            check(sscm_tensor_load(dg_in.c_str(), &hr.t));
            check(sscm_degrade(hr.t, dg_scale, &lr.t));
            check(sscm_tensor_save(lr.t, dg_out.c_str()));
            double p = 0;
            check(sscm_psnr(lr.t, hr.t, 1.0, &p));
            std::cout << "psnr_db " << fmt(p) << '\n';
        } else if (*tr) {
            const auto cfg = resolve_config(tr_cfg, tr_set);
            const auto csv = tr_csv.empty() ? tr_ckpt + ".loss.csv" : tr_csv;
            sscm_train_summary s{};
            check(sscm_train(cfg.c_str(), tr_data.empty() ? nullptr : tr_data.c_str(), tr_ckpt.c_str(), csv.c_str(),
                             progress, nullptr, &s));
            std::printf("iterations %zu\ninitial_loss %.6f\nfinal_loss %.6f\nseconds %.1f\n", s.iterations,
                        s.initial_loss, s.final_loss, s.seconds);
            if (s.has_heldout)
                std::printf("heldout_psnr_db %s\nheldout_ssim %.6f\nzero_padding_psnr_db %s\n",
                            fmt(s.heldout.psnr_db).c_str(), s.heldout.ssim, fmt(s.zero_padding.psnr_db).c_str());
        } else if (*inf) {
            ModelPtr model;
            TensorPtr lr, ref, out, disp, groups;
            check(sscm_model_load(inf_ckpt.c_str(), &model.m));
            check(sscm_tensor_load(inf_lr.c_str(), &lr.t));
            check(sscm_tensor_load(inf_ref.c_str(), &ref.t));
            check(sscm_infer(model.m, lr.t, ref.t, &out.t, inf_disp.empty() ? nullptr : &disp.t,
                             inf_groups.empty() ? nullptr : &groups.t));
            check(sscm_tensor_save(out.t, inf_out.c_str()));
            if (!inf_preview.empty())
                check(sscm_tensor_save_pgm(out.t, inf_preview.c_str(), 255));
            if (!inf_disp.empty())
                check(sscm_tensor_save(disp.t, inf_disp.c_str()));
            if (!inf_groups.empty()) {
                if (!groups.t)
                    std::cerr << "note: grouping disabled in this model, no group maps written\n";
                else
                    check(sscm_tensor_save(groups.t, inf_groups.c_str()));
            }
        } else if (*ev) {
            if (ev_pred.size() != ev_gt.size()) {
                std::cerr << "error: --pred and --gt counts differ\n";
                return kBadArgs;
            }
            const bool fresh = !std::filesystem::exists(ev_csv) || std::filesystem::file_size(ev_csv) == 0;
            std::ofstream os(ev_csv, std::ios::app);
            if (!os) {
                std::cerr << "error: cannot write " << ev_csv << '\n';
                return kIo;
            }
            if (fresh)
                os << "id,psnr_db,ssim,rmse\n";
            for (std::size_t i = 0; i < ev_pred.size(); ++i) {
                TensorPtr pred, gt;
                check(sscm_tensor_load(ev_pred[i].c_str(), &pred.t));
                check(sscm_tensor_load(ev_gt[i].c_str(), &gt.t));
                sscm_metrics m{};
                check(sscm_evaluate(pred.t, gt.t, &m));
                const auto id = std::filesystem::path(ev_pred[i]).stem().string();
                const auto row = id + "," + fmt(m.psnr_db) + "," + fmt(m.ssim) + "," + fmt(m.rmse);
                os << row << '\n';
                std::cout << row << '\n';
            }
        } else if (*ab) {
            const auto cfg = resolve_config(ab_cfg, ab_set);
            int ok = 0;
            check(sscm_ablate(cfg.c_str(), ab_data.empty() ? nullptr : ab_data.c_str(), ab_csv.c_str(), log_line,
                              nullptr, &ok));
            std::cout << read_text(ab_csv);
            std::cout << "ordering " << (ok ? "holds" : "violated") << '\n';
        } else if (*gc) {
            Owned report;
            const auto s = sscm_gradcheck(gc_no_model ? 0 : 1, &report.s);
            std::cout << report.str();
            check(s);
        } else if (*pc) {
            std::string text;
            if (!pc_cfg.empty())
                text = read_text(pc_cfg);
            const bool fragment = !text.empty() && nlohmann::json::accept(text) &&
                                  nlohmann::json::parse(text).contains("conv2d");
            if (!fragment) {
                auto overrides = pc_set;
                if (!pc_preset.empty())
                    overrides.insert(overrides.begin(), "preset=" + pc_preset);
                text = resolve_config(pc_cfg, overrides);
            }
            std::size_t total = 0;
            Owned breakdown;
            check(sscm_param_count(text.c_str(), &total, &breakdown.s));
            std::cout << total << '\n' << breakdown.str() << '\n';
            const auto doc = nlohmann::json::parse(breakdown.str());
            if (doc.value("preset", "") == "paper")
                std::cout << "note: the paper reports 6.1M parameters; this preset is a best-effort reading of the "
                             "architecture and is not guaranteed to match that figure\n";
        }
    } catch (const Failure& f) {
        return f.code;
    }
    return kOk;
}
