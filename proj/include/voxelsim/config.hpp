#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "voxelsim/heads.hpp"
#include "voxelsim/unet.hpp"

namespace voxelsim {

/// Every training hyperparameter and module switch, serialized field-for-field
/// to the JSON config file. CLI flags override file values.
struct TrainConfig {
    UNetConfig unet;
    HeadConfig head;

    int batch_size = 4;
    double weight_decay = 1e-5;
    double base_lr = 1e-3;
    int epochs = 500;
    double poly_power = 0.9;
    double lambda_feature = -1.0;  // < 0: auto (100 for |F|=1, 10 otherwise)
    int n_feature_layers = 3;
    int total_cap = 1700;
    int fn_cap = 1000;
    uint64_t seed = 1;

    bool sample_background = true;
    bool weighted_loss = true;
    bool pooled_layers = true;          // cross-layer pooled pairs (default)
    std::vector<double> layer_weights;  // w_f; empty = all 1
    bool per_volume_caps = false;       // caps per volume instead of per batch
    bool zscore_normalize = false;

    double label_fraction = 1.0;
    double val_fraction = 0.25;
    std::array<int, 3> patch_shape{0, 0, 0};  // 0 = whole volume

    double window_lo = -200.0;
    double window_hi = 250.0;
    std::array<int, 3> target_shape{128, 128, 64};
    bool preprocess_inputs = true;

    std::string run_label;  // report label; empty = derived
    int checkpoint_every = 0;

    double resolved_lambda() const {
        if (lambda_feature >= 0.0) return lambda_feature;
        return n_feature_layers == 1 ? 100.0 : 10.0;
    }
    std::string resolved_label() const {
        if (!run_label.empty()) return run_label;
        if (resolved_lambda() == 0.0) return "3D U-Net";
        return "feature (" + std::to_string(n_feature_layers) + ")";
    }
    bool use_patches() const {
        return patch_shape[0] > 0 && patch_shape[1] > 0 && patch_shape[2] > 0;
    }
    void validate() const;
};

/// Strict parser: unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& cfg, const std::string& path);

/// FNV-1a over the canonical JSON dump; names run directories.
std::string config_hash(const TrainConfig& cfg);

}  // namespace voxelsim
