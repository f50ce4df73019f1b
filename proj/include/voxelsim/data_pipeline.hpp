#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "voxelsim/volume.hpp"

namespace voxelsim {

/// One CT volume: intensity grid (HU before preprocessing, [0,1] after),
/// physical spacing in mm/voxel, and the class-id label grid (0 = background).
struct VolumeSample {
    Volume<double> image;
    Volume<uint8_t> label;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string id;
};

struct ManifestEntry {
    std::string image;
    std::string label;
    std::string split;  // "train" | "test"
};

struct DatasetManifest {
    std::vector<std::string> class_names;  // length C, index 0 = background
    std::vector<ManifestEntry> entries;

    int n_classes() const { return int(class_names.size()); }
    std::vector<ManifestEntry> split(const std::string& tag) const;

    /// Load/save the JSON manifest format:
    ///   {"classes": [...], "entries": [{"image","label","split"}]}
    /// Relative entry paths resolve against data_root if given, else against
    /// the manifest's directory.
    static DatasetManifest load(const std::string& path, const std::string& data_root = "");
    void save(const std::string& path) const;
};

// ---------------------------------------------------------------------------
// Raw volume format: little-endian float32 (image) or uint8 (label) in
// x-fastest order, with a JSON sidecar <file>.json holding
// {"shape":[H,W,D],"spacing":[sx,sy,sz],"dtype":"float32"|"uint8"}.
// ---------------------------------------------------------------------------

void write_raw_image(const std::string& path, const Volume<double>& img,
                     const std::array<double, 3>& spacing);
void write_raw_label(const std::string& path, const Volume<uint8_t>& lbl,
                     const std::array<double, 3>& spacing);

/// Load an image+label pair (raw or NIfTI, by extension) into one sample.
/// Throws DataError on missing files, unreadable formats, or image/label
/// shape mismatch.
VolumeSample load_volume(const std::string& image_path, const std::string& label_path);

/// Image-only loader (raw or NIfTI); returns intensities and spacing.
std::pair<Volume<double>, std::array<double, 3>> load_image(const std::string& path);
std::pair<Volume<uint8_t>, std::array<double, 3>> load_label(const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessOptions {
    double window_lo = -200.0;  // soft-tissue CT window, HU
    double window_hi = 250.0;
    Shape3 target_shape{128, 128, 64};
    bool zscore = false;  // alternative normalization: z-score after windowing
};

/// Clamp to the window, map affinely to [0,1] (or z-score), resample the image
/// trilinearly and the label nearest-neighbor to target_shape, and rescale
/// spacing so the physical extent is preserved.
VolumeSample preprocess(const VolumeSample& sample, const PreprocessOptions& opt = {});

// ---------------------------------------------------------------------------
// Synthetic phantoms
// ---------------------------------------------------------------------------

struct PhantomSpec {
    uint64_t seed = 0;
    Shape3 shape{32, 32, 16};
    int n_classes = 3;  // including background
    /// Per foreground class (index 0 <-> class 1): inclusive [lo,hi] range for
    /// the number of ellipsoids of that class. Empty = one ellipsoid each.
    std::vector<std::pair<int, int>> organ_count_ranges;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    double noise_hu = 12.0;
};

struct PhantomResult {
    VolumeSample sample;
    std::vector<int64_t> class_voxel_counts;  // length n_classes, from placement
};

/// Deterministic ellipsoid phantom: non-overlapping "organs" with
/// class-correlated HU plateaus plus noise, labels exactly matching the
/// placed shapes. Throws DataError when the grid cannot fit the request.
PhantomResult generate_synthetic_phantom(const PhantomSpec& spec);

}  // namespace voxelsim
