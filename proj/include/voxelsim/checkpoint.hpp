#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxelsim/config.hpp"

namespace voxelsim {

/// Checkpoint container: 8-byte magic "VSCKPT1\n", a little-endian uint64
/// header length, a JSON header (configs, bookkeeping, tensor directory), and
/// a payload of little-endian float64 tensors. Parameter tensors are keyed by
/// the stable layer names from params(); optimizer state uses an "opt."
/// prefix, head parameters a "heads." prefix.
struct Checkpoint {
    TrainConfig train;
    int epoch = 0;
    double best_val_dsc = 0.0;
    bool heads_included = false;
    std::map<std::string, std::vector<double>> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

class UNet3D;
class VoxelHeads;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Assemble a checkpoint from live modules. heads/opt_state may be null/empty.
Checkpoint make_checkpoint(const TrainConfig& cfg, UNet3D& model, VoxelHeads* heads,
                           const std::map<std::string, std::vector<double>>& opt_state, int epoch,
                           double best_val_dsc);

/// Rebuild modules from a checkpoint. build_unet ignores head tensors, so it
/// works on inference-only (stripped) checkpoints too.
UNet3D build_unet(const Checkpoint& ckpt);
VoxelHeads build_heads(const Checkpoint& ckpt, const UNet3D& model);

/// Drop head parameters and optimizer state, keeping evaluation behavior
/// bit-identical. Writes the inference-only checkpoint to out_path.
void strip_heads(const std::string& in_path, const std::string& out_path);

}  // namespace voxelsim
