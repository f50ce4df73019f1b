#include "voxelsim/config.hpp"

#include <fstream>
#include <set>

using json = nlohmann::json;

namespace voxelsim {

void TrainConfig::validate() const {
    unet.validate();
    if (head.embed_dim < 2 || head.hidden_dim < 2)
        throw ConfigError("head dims must be >= 2");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (poly_power <= 0.0) throw ConfigError("poly_power must be > 0");
    if (n_feature_layers < 1 || n_feature_layers > unet.depth)
        throw ConfigError("n_feature_layers must be in [1, unet.depth]");
    if (total_cap <= 0 || fn_cap <= 0) throw ConfigError("sampling caps must be > 0");
    if (!layer_weights.empty() && int(layer_weights.size()) != n_feature_layers)
        throw ConfigError("layer_weights must have n_feature_layers entries");
    if (label_fraction <= 0.0 || label_fraction > 1.0)
        throw ConfigError("label_fraction must be in (0, 1]");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("val_fraction must be in [0, 1)");
    if (window_lo >= window_hi) throw ConfigError("window_lo must be below window_hi");
    for (int v : target_shape)
        if (v < 4) throw ConfigError("target_shape components must be >= 4");
}

json train_config_to_json(const TrainConfig& c) {
    return json{
        {"unet",
         {{"depth", c.unet.depth},
          {"base_channels", c.unet.base_channels},
          {"n_classes", c.unet.n_classes},
          {"in_channels", c.unet.in_channels},
          {"norm", c.unet.norm},
          {"upsample", c.unet.upsample}}},
        {"head",
         {{"embed_dim", c.head.embed_dim},
          {"hidden_dim", c.head.hidden_dim},
          {"norm", c.head.norm}}},
        {"batch_size", c.batch_size},
        {"weight_decay", c.weight_decay},
        {"base_lr", c.base_lr},
        {"epochs", c.epochs},
        {"poly_power", c.poly_power},
        {"lambda", c.lambda_feature},
        {"n_feature_layers", c.n_feature_layers},
        {"total_cap", c.total_cap},
        {"fn_cap", c.fn_cap},
        {"seed", c.seed},
        {"sample_background", c.sample_background},
        {"weighted_loss", c.weighted_loss},
        {"pooled_layers", c.pooled_layers},
        {"layer_weights", c.layer_weights},
        {"per_volume_caps", c.per_volume_caps},
        {"zscore_normalize", c.zscore_normalize},
        {"label_fraction", c.label_fraction},
        {"val_fraction", c.val_fraction},
        {"patch_shape", c.patch_shape},
        {"window_lo", c.window_lo},
        {"window_hi", c.window_hi},
        {"target_shape", c.target_shape},
        {"preprocess_inputs", c.preprocess_inputs},
        {"run_label", c.run_label},
        {"checkpoint_every", c.checkpoint_every},
    };
}

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown config key '" + it.key() + "' in " + where);
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
    static const std::set<std::string> top = {
        "unet",           "head",        "batch_size",       "weight_decay",
        "base_lr",        "epochs",      "poly_power",       "lambda",
        "n_feature_layers", "total_cap", "fn_cap",           "seed",
        "sample_background", "weighted_loss", "pooled_layers", "layer_weights",
        "per_volume_caps", "zscore_normalize", "label_fraction", "val_fraction",
        "patch_shape",    "window_lo",   "window_hi",        "target_shape",
        "preprocess_inputs", "run_label", "checkpoint_every",
    };
    static const std::set<std::string> unet_keys = {"depth",       "base_channels", "n_classes",
                                                    "in_channels", "norm",          "upsample"};
    static const std::set<std::string> head_keys = {"embed_dim", "hidden_dim", "norm"};

    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    check_keys(j, top, "config");

    TrainConfig c;
    if (j.contains("unet")) {
        const json& u = j.at("unet");
        check_keys(u, unet_keys, "config.unet");
        get_to(u, "depth", c.unet.depth);
        get_to(u, "base_channels", c.unet.base_channels);
        get_to(u, "n_classes", c.unet.n_classes);
        get_to(u, "in_channels", c.unet.in_channels);
        get_to(u, "norm", c.unet.norm);
        get_to(u, "upsample", c.unet.upsample);
    }
    if (j.contains("head")) {
        const json& h = j.at("head");
        check_keys(h, head_keys, "config.head");
        get_to(h, "embed_dim", c.head.embed_dim);
        get_to(h, "hidden_dim", c.head.hidden_dim);
        get_to(h, "norm", c.head.norm);
    }
    get_to(j, "batch_size", c.batch_size);
    get_to(j, "weight_decay", c.weight_decay);
    get_to(j, "base_lr", c.base_lr);
    get_to(j, "epochs", c.epochs);
    get_to(j, "poly_power", c.poly_power);
    get_to(j, "lambda", c.lambda_feature);
    get_to(j, "n_feature_layers", c.n_feature_layers);
    get_to(j, "total_cap", c.total_cap);
    get_to(j, "fn_cap", c.fn_cap);
    get_to(j, "seed", c.seed);
    get_to(j, "sample_background", c.sample_background);
    get_to(j, "weighted_loss", c.weighted_loss);
    get_to(j, "pooled_layers", c.pooled_layers);
    get_to(j, "layer_weights", c.layer_weights);
    get_to(j, "per_volume_caps", c.per_volume_caps);
    get_to(j, "zscore_normalize", c.zscore_normalize);
    get_to(j, "label_fraction", c.label_fraction);
    get_to(j, "val_fraction", c.val_fraction);
    get_to(j, "patch_shape", c.patch_shape);
    get_to(j, "window_lo", c.window_lo);
    get_to(j, "window_hi", c.window_hi);
    get_to(j, "target_shape", c.target_shape);
    get_to(j, "preprocess_inputs", c.preprocess_inputs);
    get_to(j, "run_label", c.run_label);
    get_to(j, "checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return train_config_from_json(j);
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << train_config_to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const TrainConfig& cfg) {
    const std::string s = train_config_to_json(cfg).dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08x", uint32_t(h ^ (h >> 32)));
    return buf;
}

}  // namespace voxelsim
