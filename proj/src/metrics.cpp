#include "voxelsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "voxelsim/rng.hpp"

#include "json.hpp"
#include "voxelsim/checkpoint.hpp"
#include "voxelsim/heads.hpp"
#include "voxelsim/kernels.hpp"
#include "voxelsim/sampler.hpp"
#include "voxelsim/unet.hpp"

using json = nlohmann::json;

namespace voxelsim {

double dsc(const Volume<uint8_t>& a, const Volume<uint8_t>& b) {
    if (!(a.shape == b.shape)) throw DataError("dsc: shape mismatch");
    int64_t na = 0, nb = 0, inter = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const bool fa = a[i] != 0, fb = b[i] != 0;
        na += fa;
        nb += fb;
        inter += fa && fb;
    }
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    return 2.0 * double(inter) / double(na + nb);
}

Volume<uint8_t> boundary_mask(const Volume<uint8_t>& mask) {
    const Shape3 s = mask.shape;
    Volume<uint8_t> out(s, 0);
    auto bg = [&](int x, int y, int z) {
        if (x < 0 || x >= s.nx || y < 0 || y >= s.ny || z < 0 || z >= s.nz) return true;
        return mask(x, y, z) == 0;
    };
    for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
            for (int x = 0; x < s.nx; ++x) {
                if (mask(x, y, z) == 0) continue;
                if (bg(x - 1, y, z) || bg(x + 1, y, z) || bg(x, y - 1, z) || bg(x, y + 1, z) ||
                    bg(x, y, z - 1) || bg(x, y, z + 1))
                    out(x, y, z) = 1;
            }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw NumericError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * double(values.size() - 1);
    const size_t lo = size_t(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - double(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

SurfaceDistances surface_distances(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
                                   const std::array<double, 3>& spacing) {
    if (!(pred.shape == gt.shape)) throw DataError("surface_distances: shape mismatch");
    SurfaceDistances res;
    const bool pred_empty =
        std::all_of(pred.data.begin(), pred.data.end(), [](uint8_t v) { return v == 0; });
    const bool gt_empty =
        std::all_of(gt.data.begin(), gt.data.end(), [](uint8_t v) { return v == 0; });
    if (pred_empty || gt_empty) return res;  // missing-structure sentinel

    const Volume<uint8_t> bp = boundary_mask(pred);
    const Volume<uint8_t> bg = boundary_mask(gt);
    const Shape3 s = pred.shape;
    Volume<double> d2_gt(s), d2_pred(s);
    kernels::edt_squared(bg.data.data(), d2_gt.data.data(), s, spacing.data());
    kernels::edt_squared(bp.data.data(), d2_pred.data.data(), s, spacing.data());

    std::vector<double> pooled;
    for (int64_t i = 0; i < s.voxels(); ++i) {
        if (bp[i]) pooled.push_back(std::sqrt(d2_gt[i]));
        if (bg[i]) pooled.push_back(std::sqrt(d2_pred[i]));
    }
    res.defined = true;
    res.n_distances = int64_t(pooled.size());
    res.hd95 = percentile(pooled, 95.0);
    res.hd_max = *std::max_element(pooled.begin(), pooled.end());
    double sum = 0.0;
    for (double d : pooled) sum += d;
    res.assd = sum / double(pooled.size());
    return res;
}

double hd95(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
            const std::array<double, 3>& spacing) {
    const SurfaceDistances s = surface_distances(pred, gt, spacing);
    if (!s.defined) throw DataError("hd95: empty mask");
    return s.hd95;
}

double assd(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
            const std::array<double, 3>& spacing) {
    const SurfaceDistances s = surface_distances(pred, gt, spacing);
    if (!s.defined) throw DataError("assd: empty mask");
    return s.assd;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

CaseMetrics evaluate_case(const Volume<uint8_t>& pred, const Volume<uint8_t>& gt,
                          const std::array<double, 3>& spacing, int n_classes,
                          const std::string& case_id) {
    CaseMetrics cm;
    cm.case_id = case_id;
    for (int c = 1; c < n_classes; ++c) {
        Volume<uint8_t> pm(pred.shape), gm(gt.shape);
        for (int64_t i = 0; i < pred.size(); ++i) {
            pm[i] = pred[i] == c;
            gm[i] = gt[i] == c;
        }
        cm.dsc.push_back(dsc(pm, gm));
        const SurfaceDistances sd = surface_distances(pm, gm, spacing);
        cm.hd95.push_back(sd.hd95);
        cm.assd.push_back(sd.assd);
    }
    return cm;
}

void MetricReport::finalize() {
    const size_t n_org = organ_names.size();
    mean_dsc.assign(n_org, 0.0);
    mean_hd95.assign(n_org, std::numeric_limits<double>::quiet_NaN());
    mean_assd.assign(n_org, std::numeric_limits<double>::quiet_NaN());
    skipped_distances = 0;
    for (size_t o = 0; o < n_org; ++o) {
        double sd = 0.0, sh = 0.0, sa = 0.0;
        int64_t nd = 0, nh = 0;
        for (const auto& c : cases) {
            sd += c.dsc[o];
            ++nd;
            if (std::isfinite(c.hd95[o])) {
                sh += c.hd95[o];
                sa += c.assd[o];
                ++nh;
            } else {
                ++skipped_distances;
            }
        }
        if (nd) mean_dsc[o] = sd / double(nd);
        if (nh) {
            mean_hd95[o] = sh / double(nh);
            mean_assd[o] = sa / double(nh);
        }
    }
    auto avg_of = [](const std::vector<double>& v) {
        double s = 0.0;
        int64_t n = 0;
        for (double x : v)
            if (std::isfinite(x)) {
                s += x;
                ++n;
            }
        return n ? s / double(n) : std::numeric_limits<double>::quiet_NaN();
    };
    avg_dsc = avg_of(mean_dsc);
    avg_hd95 = avg_of(mean_hd95);
    avg_assd = avg_of(mean_assd);
}

void MetricReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "case,organ,dsc,hd95,assd\n";
    for (const auto& c : cases)
        for (size_t o = 0; o < organ_names.size(); ++o) {
            out << c.case_id << "," << organ_names[o] << "," << c.dsc[o] << ",";
            if (std::isfinite(c.hd95[o]))
                out << c.hd95[o] << "," << c.assd[o];
            else
                out << "missing,missing";
            out << "\n";
        }
}

void MetricReport::write_json(const std::string& path) const {
    json j;
    j["label"] = label;
    j["params"] = param_count;
    j["organs"] = organ_names;
    j["mean_dsc"] = mean_dsc;
    j["mean_hd95"] = mean_hd95;
    j["mean_assd"] = mean_assd;
    j["avg_dsc"] = avg_dsc;
    j["avg_hd95"] = avg_hd95;
    j["avg_assd"] = avg_assd;
    j["skipped_distances"] = skipped_distances;
    json cases_j = json::array();
    for (const auto& c : cases) {
        cases_j.push_back({{"case", c.case_id},
                           {"dsc", c.dsc},
                           {"hd95", c.hd95},
                           {"assd", c.assd}});
    }
    j["cases"] = std::move(cases_j);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    // NaN is not valid JSON; serialize sentinels as null.
    out << j.dump(2, ' ', false, json::error_handler_t::replace) << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoint-driven evaluation
// ---------------------------------------------------------------------------

namespace {

VolumeSample prepare_sample(const ManifestEntry& entry, const TrainConfig& cfg, bool do_pre) {
    VolumeSample s = load_volume(entry.image, entry.label);
    if (!do_pre) return s;
    PreprocessOptions opt;
    opt.window_lo = cfg.window_lo;
    opt.window_hi = cfg.window_hi;
    opt.target_shape = {cfg.target_shape[0], cfg.target_shape[1], cfg.target_shape[2]};
    opt.zscore = cfg.zscore_normalize;
    return preprocess(s, opt);
}

}  // namespace

MetricReport evaluate(const std::string& checkpoint_path, const DatasetManifest& manifest,
                      const EvalOptions& opt) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (ckpt.train.unet.n_classes != manifest.n_classes())
        throw DataError("class-count mismatch: checkpoint has " +
                        std::to_string(ckpt.train.unet.n_classes) + ", manifest has " +
                        std::to_string(manifest.n_classes()));
    UNet3D model = build_unet(ckpt);

    const auto entries = manifest.split(opt.split);
    if (entries.empty()) throw DataError("manifest split '" + opt.split + "' is empty");

    MetricReport report;
    report.label = opt.label_override.empty() ? ckpt.train.resolved_label() : opt.label_override;
    report.param_count = model.count_parameters();
    report.organ_names.assign(manifest.class_names.begin() + 1, manifest.class_names.end());

    for (const auto& entry : entries) {
        const VolumeSample s =
            prepare_sample(entry, ckpt.train, opt.preprocess && ckpt.train.preprocess_inputs);
        UNetContext ctx;
        const FeaturePyramid pyr = model.forward(s.image, 0, ctx);
        const Volume<uint8_t> pred = argmax_channels(*pyr.score);
        report.cases.push_back(
            evaluate_case(pred, s.label, s.spacing, manifest.n_classes(), s.id));
    }
    report.finalize();
    if (report.skipped_distances > 0)
        std::cerr << "[voxelsim] note: " << report.skipped_distances
                  << " organ/case distance entries skipped (missing structure)\n";
    return report;
}

int64_t export_embeddings(const std::string& checkpoint_path, const DatasetManifest& manifest,
                          const std::string& split, const std::vector<int>& layer_ids,
                          int sample_cap, const std::string& out_csv, uint64_t seed) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    UNet3D model = build_unet(ckpt);
    VoxelHeads heads = build_heads(ckpt, model);  // throws on stripped checkpoints
    if (sample_cap <= 0) throw ConfigError("sample cap must be positive");
    for (int id : layer_ids)
        if (id < 1 || id > heads.n_layers())
            throw ConfigError("layer id " + std::to_string(id) + " out of range");

    const auto entries = manifest.split(split);
    if (entries.empty()) throw DataError("manifest split '" + split + "' is empty");

    std::ofstream out(out_csv);
    if (!out) throw DataError("cannot write embeddings: " + out_csv);
    out << std::setprecision(10);
    for (int j = 0; j < ckpt.train.head.embed_dim; ++j) out << "e" << j << ",";
    out << "class_id,layer_id,volume_id\n";

    SamplerOptions sopt;
    sopt.total_cap = sample_cap;
    sopt.fn_cap = sample_cap;
    sopt.include_background = ckpt.train.sample_background;

    int64_t rows = 0;
    for (size_t vi = 0; vi < entries.size(); ++vi) {
        const VolumeSample s = prepare_sample(entries[vi], ckpt.train, ckpt.train.preprocess_inputs);
        UNetContext ctx;
        const FeaturePyramid pyr = model.forward(s.image, ckpt.train.n_feature_layers, ctx);
        for (int id : layer_ids) {
            const Fmap& feat = *pyr.features[size_t(id - 1)];
            const Volume<uint8_t> label_i = downsample_label(s.label, feat.spatial());
            const Volume<uint8_t> tags = classify_voxels(label_i, *pyr.score, feat.spatial());
            const SamplingPlan plan = sample_voxels(label_i, tags, ckpt.train.unet.n_classes, sopt,
                                                    Rng::mix(seed, vi), id);
            std::vector<int64_t> voxels;
            voxels.reserve(plan.entries.size());
            for (const auto& e : plan.entries) voxels.push_back(e.ref.index);
            EmbedCache cache;
            const EmbeddingBatch batch = heads.embed(feat, voxels, id - 1, int(vi), cache);
            for (int64_t r = 0; r < batch.size(); ++r) {
                const double* zr = batch.z.row(r);
                for (int j = 0; j < batch.z.d; ++j) out << zr[j] << ",";
                out << int(plan.entries[size_t(r)].cls) << "," << id << "," << vi << "\n";
                ++rows;
            }
        }
    }
    return rows;
}

}  // namespace voxelsim
