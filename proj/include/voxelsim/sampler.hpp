#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelsim/volume.hpp"

namespace voxelsim {

/// Nearest-neighbor label downsampling; target extents must divide the input
/// extents. Never introduces class ids absent from the input.
Volume<uint8_t> downsample_label(const Volume<uint8_t>& label, Shape3 target);

/// Per-voxel argmax over the class axis of a score map.
Volume<uint8_t> argmax_channels(const Fmap& score);

/// FN/TP tags at a feature layer's resolution: the full-resolution prediction
/// (argmax of the score map) is nearest-neighbor downsampled; a voxel is FN
/// when the downsampled prediction differs from its ground-truth class.
/// Returns 1 = FN, 0 = TP.
Volume<uint8_t> classify_voxels(const Volume<uint8_t>& label_i, const Fmap& score_map,
                                Shape3 layer_shape);

struct VoxelRef {
    int volume = 0;
    int64_t index = 0;  // flat index on the layer grid
};

struct SamplerOptions {
    int total_cap = 1700;
    int fn_cap = 1000;
    bool include_background = true;  // sample class 0 as its own class
};

/// Chosen voxels for one feature layer (possibly pooled over a batch).
struct SamplingPlan {
    int layer_id = 0;  // 1-based F_i index
    int total_cap = 1700;
    int fn_cap = 1000;
    uint64_t rng_seed = 0;

    struct Entry {
        VoxelRef ref;
        uint8_t cls = 0;
        bool fn = false;
    };
    std::vector<Entry> entries;

    int64_t fn_count() const;
    std::vector<int64_t> class_counts(int n_classes) const;
};

/// FN-prioritized, per-class capped sampling for one layer. FN voxels are
/// drawn first (uniformly without replacement, up to fn_cap), then TP voxels
/// fill the remaining budget up to total_cap. Within each pool the budget is
/// apportioned across present classes proportionally to availability, with
/// every class owning at least one eligible voxel receiving at least one
/// sample. Deterministic given the seed. No foreground voxels -> empty plan.
SamplingPlan sample_voxels(const std::vector<const Volume<uint8_t>*>& labels_i,
                           const std::vector<const Volume<uint8_t>*>& fn_tags, int n_classes,
                           const SamplerOptions& opt, uint64_t seed, int layer_id = 1);

/// Single-volume convenience wrapper.
SamplingPlan sample_voxels(const Volume<uint8_t>& label_i, const Volume<uint8_t>& fn_tags,
                           int n_classes, const SamplerOptions& opt, uint64_t seed,
                           int layer_id = 1);

void write_plan_json(const SamplingPlan& plan, const std::string& path);

}  // namespace voxelsim
