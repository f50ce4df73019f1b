#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxelsim/checkpoint.hpp"
#include "voxelsim/config.hpp"
#include "voxelsim/data_pipeline.hpp"
#include "voxelsim/heads.hpp"
#include "voxelsim/losses.hpp"
#include "voxelsim/unet.hpp"

namespace voxelsim {

/// Polynomial annealing: base_lr * (1 - epoch/total_epochs)^power.
/// Throws ConfigError when epoch > total_epochs.
double poly_lr(int epoch, int total_epochs, double base_lr, double power = 0.9);

/// Adam with the weight-decay term folded into the gradient (L2 style).
class Adam {
public:
    void attach(std::vector<ParamRef> params, double weight_decay);
    void zero_grad();
    void step(double lr);
    std::map<std::string, std::vector<double>> state() const;
    void load_state(const std::map<std::string, std::vector<double>>& tensors);

private:
    std::vector<ParamRef> params_;
    std::vector<std::vector<double>> m_, v_;
    double wd_ = 0.0;
    int64_t t_ = 0;
};

struct TrainResult {
    std::string run_dir;
    std::string config_path;
    std::string log_path;
    std::string best_checkpoint;
    std::string last_checkpoint;
    double best_val_dsc = 0.0;
    double final_train_dsc = 0.0;
    int epochs_run = 0;
};

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    /// Full optimization loop over the manifest's train split: label-fraction
    /// selection, preprocessing, per-epoch polynomial LR, best/last
    /// checkpoints, JSONL step+epoch log.
    TrainResult fit(const DatasetManifest& manifest, const std::string& run_dir,
                    const std::string& resume_path = "");

    /// One optimization step over a batch: forward every volume, pooled
    /// FN-prioritized sampling per feature layer, Dice + feature losses, one
    /// optimizer update. With lambda == 0 the feature path is not evaluated.
    LossReport train_step(const std::vector<const VolumeSample*>& batch, int epoch,
                          int step_in_epoch);

    Volume<uint8_t> predict(const VolumeSample& sample);
    double mean_foreground_dsc(const std::vector<VolumeSample>& vols);

    UNet3D& model() { return model_; }
    VoxelHeads& heads() { return heads_; }
    Adam& optimizer() { return opt_; }
    const TrainConfig& config() const { return cfg_; }

private:
    TrainConfig cfg_;
    UNet3D model_;
    VoxelHeads heads_;
    Adam opt_;
};

}  // namespace voxelsim
