#include "train/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sscm::train {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& section, std::initializer_list<const char*> known)
{
    if (!obj.is_object())
        throw ConfigError("config: '" + section + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        bool found = false;
        for (const char* k : known)
            found = found || key == k;
        if (!found)
            throw ConfigError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    }
}

template <typename V>
void read(const json& obj, const char* key, V& out, const std::string& section)
{
    if (!obj.contains(key))
        return;
    const auto& v = obj.at(key);
    try {
        if constexpr (std::is_same_v<V, bool>) {
            if (!v.is_boolean())
                throw ConfigError("expected a boolean");
        } else if constexpr (std::is_integral_v<V>) {
            if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
                throw ConfigError("expected a non-negative integer");
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!v.is_number())
                throw ConfigError("expected a number");
        } else {
            if (!v.is_string())
                throw ConfigError("expected a string");
        }
        out = v.get<V>();
    } catch (const ConfigError& e) {
        throw ConfigError("config: " + section + "." + key + ": " + e.what());
    }
}

void read_model(const json& j, model::ModelConfig& m)
{
    reject_unknown(j, "model",
                   {"channels", "num_blocks", "prototypes", "sub_group", "window", "window_stride", "heads",
                    "ffn_expansion", "use_dswm", "use_satab", "use_sffb", "ema_decay"});
    read(j, "channels", m.channels, "model");
    read(j, "num_blocks", m.num_blocks, "model");
    read(j, "prototypes", m.prototypes, "model");
    read(j, "sub_group", m.sub_group, "model");
    read(j, "window", m.window, "model");
    read(j, "window_stride", m.window_stride, "model");
    read(j, "heads", m.heads, "model");
    read(j, "ffn_expansion", m.ffn_expansion, "model");
    read(j, "use_dswm", m.use_dswm, "model");
    read(j, "use_satab", m.use_satab, "model");
    read(j, "use_sffb", m.use_sffb, "model");
    read(j, "ema_decay", m.ema_decay, "model");
}

void read_train(const json& j, TrainConfig& t)
{
    reject_unknown(j, "train", {"lr", "iterations", "batch_size", "seed", "checkpoint_every", "lr_schedule"});
    read(j, "lr", t.lr, "train");
    read(j, "iterations", t.iterations, "train");
    read(j, "batch_size", t.batch_size, "train");
    read(j, "seed", t.seed, "train");
    read(j, "checkpoint_every", t.checkpoint_every, "train");
    read(j, "lr_schedule", t.lr_schedule, "train");
}

void read_data(const json& j, DataConfig& d)
{
    reject_unknown(j, "data",
                   {"train_pairs", "test_pairs", "size", "scale", "seed", "offset_x", "offset_y", "min_ellipses",
                    "max_ellipses"});
    read(j, "train_pairs", d.train_pairs, "data");
    read(j, "test_pairs", d.test_pairs, "data");
    read(j, "size", d.size, "data");
    read(j, "scale", d.scale, "data");
    read(j, "seed", d.seed, "data");
    read(j, "offset_x", d.offset_x, "data");
    read(j, "offset_y", d.offset_y, "data");
    read(j, "min_ellipses", d.min_ellipses, "data");
    read(j, "max_ellipses", d.max_ellipses, "data");
}

void read_ablation(const json& j, RunConfig& cfg)
{
    reject_unknown(j, "ablation", {"seeds"});
    if (!j.contains("seeds"))
        return;
    const auto& s = j.at("seeds");
    if (!s.is_array() || s.empty())
        throw ConfigError("config: ablation.seeds must be a non-empty array");
    cfg.ablation_seeds.clear();
    for (const auto& v : s) {
        if (!v.is_number_unsigned())
            throw ConfigError("config: ablation.seeds entries must be non-negative integers");
        cfg.ablation_seeds.push_back(v.get<std::uint64_t>());
    }
}

RunConfig from_json(const json& root)
{
    reject_unknown(root, "", {"preset", "model", "train", "data", "ablation"});
    RunConfig cfg;
    if (root.contains("preset")) {
        if (!root.at("preset").is_string())
            throw ConfigError("config: preset must be a string");
        cfg.preset = root.at("preset").get<std::string>();
    }
    cfg.model = model::preset(cfg.preset);
    cfg.data.size = cfg.model.height;
    if (root.contains("model"))
        read_model(root.at("model"), cfg.model);
    if (root.contains("train"))
        read_train(root.at("train"), cfg.train);
    if (root.contains("data"))
        read_data(root.at("data"), cfg.data);
    if (root.contains("ablation"))
        read_ablation(root.at("ablation"), cfg);
    cfg.model.height = cfg.model.width = cfg.data.size;
    cfg.validate();
    return cfg;
}

json as_json(const RunConfig& cfg)
{
    const auto& m = cfg.model;
    const auto& t = cfg.train;
    const auto& d = cfg.data;
    return json{
        {"preset", cfg.preset},
        {"model",
         {{"channels", m.channels},
          {"num_blocks", m.num_blocks},
          {"prototypes", m.prototypes},
          {"sub_group", m.sub_group},
          {"window", m.window},
          {"window_stride", m.window_stride},
          {"heads", m.heads},
          {"ffn_expansion", m.ffn_expansion},
          {"use_dswm", m.use_dswm},
          {"use_satab", m.use_satab},
          {"use_sffb", m.use_sffb},
          {"ema_decay", m.ema_decay}}},
        {"train",
         {{"lr", t.lr},
          {"iterations", t.iterations},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"lr_schedule", t.lr_schedule}}},
        {"data",
         {{"train_pairs", d.train_pairs},
          {"test_pairs", d.test_pairs},
          {"size", d.size},
          {"scale", d.scale},
          {"seed", d.seed},
          {"offset_x", d.offset_x},
          {"offset_y", d.offset_y},
          {"min_ellipses", d.min_ellipses},
          {"max_ellipses", d.max_ellipses}}},
        {"ablation", {{"seeds", cfg.ablation_seeds}}},
    };
}

} // namespace

void RunConfig::validate() const
{
    model.validate();
    train.validate();
    if (data.train_pairs == 0)
        throw ConfigError("data.train_pairs must be at least 1");
    if (data.scale == 0 || data.size % data.scale != 0)
        throw ConfigError("data.scale must divide data.size");
    if (data.max_ellipses < data.min_ellipses)
        throw ConfigError("data.max_ellipses must be >= data.min_ellipses");
}

RunConfig parse_run_config(const std::string& json_text)
{
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return from_json(root);
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not key=value");
    const auto key = assignment.substr(0, eq);
    const auto raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw; // bare strings such as preset=tiny
    }
    auto root = as_json(cfg);
    if (key == "preset") {
        // A preset override resets the model section to that preset.
        root.erase("model");
        root["preset"] = value;
        root["data"].erase("size");
        cfg = from_json(root);
        return;
    }
    const auto dot = key.find('.');
    if (dot == std::string::npos)
        throw ConfigError("override key '" + key + "' must be section.key");
    const auto section = key.substr(0, dot), field = key.substr(dot + 1);
    if (!root.contains(section))
        throw ConfigError("config: unknown section '" + section + "'");
    root[section][field] = value;
    cfg = from_json(root);
}

void apply_seed_env(RunConfig& cfg)
{
    const char* env = std::getenv("SSCM_SEED");
    if (!env || !*env)
        return;
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-')
        throw ConfigError(std::string("SSCM_SEED '") + env + "' is not a non-negative integer");
    cfg.train.seed = v;
}

std::string to_json(const RunConfig& cfg)
{
    return as_json(cfg).dump(2);
}

} // namespace sscm::train
