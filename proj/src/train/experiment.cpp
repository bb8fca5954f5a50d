#include "train/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <regex>

#include "core/ssct.hpp"
#include "data/degrade.hpp"

namespace sscm::train {

Datasets make_datasets(const DataConfig& cfg)
{
    data::PhantomSpec spec;
    spec.size = cfg.size;
    spec.scale = cfg.scale;
    spec.offset = {cfg.offset_x, cfg.offset_y};
    spec.min_ellipses = cfg.min_ellipses;
    spec.max_ellipses = cfg.max_ellipses;
    Datasets d;
    spec.seed = cfg.seed;
    d.train = data::generate_phantom_set<float>(spec, cfg.train_pairs);
    spec.seed = cfg.seed + 100000;
    d.test = data::generate_phantom_set<float>(spec, cfg.test_pairs);
    return d;
}

std::vector<data::ImagePair<float>> load_pair_dir(const std::filesystem::path& dir, std::size_t scale)
{
    if (!std::filesystem::is_directory(dir))
        throw IoError("not a directory: " + dir.string());
    const std::regex pattern(R"(pair_(\d+)_tar\.ssct)");
    std::vector<std::pair<std::size_t, std::filesystem::path>> found;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const auto name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern))
            found.emplace_back(std::stoul(m[1].str()), entry.path());
    }
    std::sort(found.begin(), found.end());
    std::vector<data::ImagePair<float>> pairs;
    for (const auto& [index, tar_path] : found) {
        const auto ref_path = dir / ("pair_" + std::to_string(index) + "_ref.ssct");
        data::ImagePair<float> p;
        p.tar_hr = load_ssct<float>(tar_path);
        p.ref_hr = load_ssct<float>(ref_path);
        if (p.tar_hr.shape() != p.ref_hr.shape())
            throw ShapeError("pair " + std::to_string(index) + ": target and reference grids differ");
        p.tar_lr = data::degrade_kspace(p.tar_hr, scale);
        p.scale = scale;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

ExperimentResult run_experiment(const RunConfig& cfg, const Datasets& data, const TrainOutputs& outputs)
{
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    model::SscmModel<float> net(cfg.model, cfg.train.seed);
    AdamState<float> state;
    ExperimentResult r;
    r.training = train(net, data.train, cfg.train, state, outputs);
    if (!data.test.empty()) {
        r.model = evaluate_model(net, data.test);
        r.zero_padding = evaluate_zero_padding(data.test);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

const std::vector<AblationVariant>& ablation_variants()
{
    static const std::vector<AblationVariant> v{
        {false, false, false}, {false, true, true}, {true, false, true}, {true, true, false}, {true, true, true}};
    return v;
}

namespace {
std::string flags(const AblationVariant& v)
{
    auto b = [](bool x) { return x ? "true" : "false"; };
    return std::string(b(v.dswm)) + "," + b(v.satab) + "," + b(v.sffb);
}
} // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Datasets& data,
                                      const std::function<void(const std::string&)>& log)
{
    if (data.test.empty())
        throw ConfigError("ablation needs held-out pairs");
    std::vector<AblationRow> rows;
    for (const auto& v : ablation_variants()) {
        AblationRow row{v, {}, {}, 0, 0};
        for (auto seed : cfg.ablation_seeds) {
            auto run = cfg;
            run.model.use_dswm = v.dswm;
            run.model.use_satab = v.satab;
            run.model.use_sffb = v.sffb;
            run.train.seed = seed;
            const auto r = run_experiment(run, data);
            row.psnr.push_back(r.model.psnr_db);
            row.ssim.push_back(r.model.ssim);
            if (log) {
                char buf[160];
                std::snprintf(buf, sizeof(buf), "ablate %s seed %llu: psnr %.4f ssim %.5f (%.1fs)", flags(v).c_str(),
                              static_cast<unsigned long long>(seed), r.model.psnr_db, r.model.ssim, r.seconds);
                log(buf);
            }
        }
        for (std::size_t i = 0; i < row.psnr.size(); ++i) {
            row.mean_psnr += row.psnr[i];
            row.mean_ssim += row.ssim[i];
        }
        row.mean_psnr /= static_cast<double>(row.psnr.size());
        row.mean_ssim /= static_cast<double>(row.ssim.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows)
{
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write " + path.string());
    os << "dswm,satab,sffb,psnr,ssim\n";
    for (const auto& r : rows)
        os << flags(r.variant) << ',' << data::format_metric(r.mean_psnr) << ',' << data::format_metric(r.mean_ssim)
           << '\n';
    if (!os)
        throw IoError("write failed for " + path.string());
}

OrderingCheck check_ablation_order(const std::vector<AblationRow>& rows, double tolerance)
{
    const AblationRow *full = nullptr, *base = nullptr;
    std::vector<const AblationRow*> singles;
    for (const auto& r : rows) {
        const int on = r.variant.dswm + r.variant.satab + r.variant.sffb;
        if (on == 3)
            full = &r;
        else if (on == 0)
            base = &r;
        else if (on == 2)
            singles.push_back(&r);
    }
    if (!full || !base || singles.empty())
        throw ContractError("ablation rows must contain the full model, the baseline and single removals");
    OrderingCheck check;
    auto compare = [&](const AblationRow& hi, const AblationRow& lo) {
        const double gap = hi.mean_psnr - lo.mean_psnr;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "(%s) %.4f vs (%s) %.4f", flags(hi.variant).c_str(), hi.mean_psnr,
                      flags(lo.variant).c_str(), lo.mean_psnr);
        if (gap >= 0)
            return;
        if (gap >= -tolerance) {
            check.ties.push_back(buf);
        } else {
            check.passed = false;
            check.violations.push_back(buf);
        }
    };
    for (const auto* s : singles) {
        compare(*full, *s);
        compare(*s, *base);
    }
    return check;
}

} // namespace sscm::train
