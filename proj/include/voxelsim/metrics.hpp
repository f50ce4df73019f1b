#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "voxelsim/data_pipeline.hpp"
#include "voxelsim/volume.hpp"

namespace voxelsim {

/// Dice overlap of two binary masks (nonzero = foreground). Both empty -> 1,
/// exactly one empty -> 0.
double dsc(const Volume<uint8_t>& a, const Volume<uint8_t>& b);

/// Foreground voxels with at least one background 6-neighbor; voxels outside
/// the grid count as background.
Volume<uint8_t> boundary_mask(const Volume<uint8_t>& mask);

/// Linear-interpolation percentile (q in [0,100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

struct SurfaceDistances {
    bool defined = false;  // false when either mask is empty
    double hd95 = std::numeric_limits<double>::quiet_NaN();
    double assd = std::numeric_limits<double>::quiet_NaN();
    double hd_max = std::numeric_limits<double>::quiet_NaN();
    int64_t n_distances = 0;
};

/// Boundary-to-boundary nearest distances in mm, pooled symmetrically over
/// both directions; HD95 is the 95th percentile of the pooled set, ASSD its
/// mean. Distance transforms do the heavy lifting; tests check them against
/// an exhaustive pairwise oracle.
SurfaceDistances surface_distances(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
                                   const std::array<double, 3>& spacing);

double hd95(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
            const std::array<double, 3>& spacing);
double assd(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
            const std::array<double, 3>& spacing);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct CaseMetrics {
    std::string case_id;
    std::vector<double> dsc;   // per organ (classes 1..C-1)
    std::vector<double> hd95;  // NaN = missing structure
    std::vector<double> assd;
};

struct MetricReport {
    std::string label;                      // run label, e.g. "feature (3)"
    std::vector<std::string> organ_names;   // classes 1..C-1
    std::vector<CaseMetrics> cases;
    std::vector<double> mean_dsc, mean_hd95, mean_assd;  // per organ
    double avg_dsc = 0.0, avg_hd95 = 0.0, avg_assd = 0.0;
    int64_t param_count = 0;
    int64_t skipped_distances = 0;  // empty-structure sentinels excluded

    void finalize();  // compute means from cases
    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

/// Per-case multi-organ metrics from label grids.
CaseMetrics evaluate_case(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
                          const std::array<double, 3>& spacing, int n_classes,
                          const std::string& case_id);

struct EvalOptions {
    std::string split = "test";
    std::string label_override;
    bool preprocess = true;  // apply the checkpoint's preprocessing options
};

/// Run a checkpoint over a manifest split: argmax segmentation per case,
/// per-organ DSC/HD95/ASSD, aggregate report.
MetricReport evaluate(const std::string& checkpoint_path, const DatasetManifest& manifest,
                      const EvalOptions& opt = {});

/// Export sampled z embeddings (with class/layer/volume ids) to CSV for
/// external 2D projection. Requires a training checkpoint that still has the
/// heads. Returns the number of rows written.
int64_t export_embeddings(const std::string& checkpoint_path, const DatasetManifest& manifest,
                          const std::string& split, const std::vector<int>& layer_ids,
                          int sample_cap, const std::string& out_csv, uint64_t seed = 0);

}  // namespace voxelsim
