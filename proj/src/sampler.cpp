#include "voxelsim/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "voxelsim/kernels.hpp"
#include "voxelsim/rng.hpp"

namespace voxelsim {

Volume<uint8_t> downsample_label(const Volume<uint8_t>& label, Shape3 target) {
    const Shape3 s = label.shape;
    if (target.nx <= 0 || target.ny <= 0 || target.nz <= 0 || s.nx % target.nx ||
        s.ny % target.ny || s.nz % target.nz)
        throw DataError("downsample_label: target " + target.str() + " does not divide " +
                        s.str());
    Volume<uint8_t> out(target);
    kernels::resample_nearest(label.data.data(), s, out.data.data(), target);
    return out;
}

Volume<uint8_t> argmax_channels(const Fmap& score) {
    Volume<uint8_t> out(score.spatial());
    const int64_t nvox = score.voxels();
    const int c = score.nc;
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < nvox; ++v) {
        const double* r = score.row(v);
        int best = 0;
        for (int i = 1; i < c; ++i)
            if (r[i] > r[best]) best = i;
        out[v] = uint8_t(best);
    }
    return out;
}

Volume<uint8_t> classify_voxels(const Volume<uint8_t>& label_i, const Fmap& score_map,
                                Shape3 layer_shape) {
    if (!(label_i.shape == layer_shape))
        throw DataError("classify_voxels: label grid does not match the layer shape");
    const Volume<uint8_t> pred_full = argmax_channels(score_map);
    Volume<uint8_t> pred_i(layer_shape);
    kernels::resample_nearest(pred_full.data.data(), pred_full.shape, pred_i.data.data(),
                              layer_shape);
    Volume<uint8_t> tags(layer_shape);
    for (int64_t v = 0; v < label_i.size(); ++v)
        tags[v] = pred_i[v] != label_i[v] ? 1 : 0;
    return tags;
}

int64_t SamplingPlan::fn_count() const {
    return std::count_if(entries.begin(), entries.end(), [](const Entry& e) { return e.fn; });
}

std::vector<int64_t> SamplingPlan::class_counts(int n_classes) const {
    std::vector<int64_t> counts(size_t(n_classes), 0);
    for (const auto& e : entries) ++counts[size_t(e.cls)];
    return counts;
}

namespace {

/// Split `budget` across classes proportionally to availability, each class
/// with availability getting at least one slot when the budget allows.
/// Deterministic; ties break toward lower class ids.
std::vector<int64_t> apportion(const std::vector<int64_t>& avail, int64_t budget) {
    const size_t n = avail.size();
    std::vector<int64_t> quota(n, 0);
    int64_t total_avail = std::accumulate(avail.begin(), avail.end(), int64_t(0));
    int64_t remaining = std::min(budget, total_avail);
    if (remaining <= 0) return quota;

    // Minimum representation first. If the budget cannot cover every class,
    // the most available classes win.
    std::vector<size_t> present;
    for (size_t c = 0; c < n; ++c)
        if (avail[c] > 0) present.push_back(c);
    if (int64_t(present.size()) > remaining) {
        std::stable_sort(present.begin(), present.end(),
                         [&](size_t a, size_t b) { return avail[a] > avail[b]; });
        for (int64_t i = 0; i < remaining; ++i) quota[present[size_t(i)]] = 1;
        return quota;
    }
    for (size_t c : present) {
        quota[c] = 1;
        --remaining;
    }

    while (remaining > 0) {
        int64_t leftover_total = 0;
        for (size_t c = 0; c < n; ++c) leftover_total += avail[c] - quota[c];
        if (leftover_total <= 0) break;
        int64_t given = 0;
        for (size_t c = 0; c < n; ++c) {
            const int64_t leftover = avail[c] - quota[c];
            if (leftover <= 0) continue;
            int64_t share = remaining * leftover / leftover_total;
            share = std::min(share, leftover);
            quota[c] += share;
            given += share;
        }
        remaining -= given;
        if (given == 0) {
            // Flooring starved everyone; hand out singles to the classes with
            // the most headroom.
            std::vector<size_t> order;
            for (size_t c = 0; c < n; ++c)
                if (avail[c] - quota[c] > 0) order.push_back(c);
            std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
                return avail[a] - quota[a] > avail[b] - quota[b];
            });
            for (size_t c : order) {
                if (remaining == 0) break;
                ++quota[c];
                --remaining;
            }
        }
    }
    return quota;
}

}  // namespace

SamplingPlan sample_voxels(const std::vector<const Volume<uint8_t>*>& labels_i,
                           const std::vector<const Volume<uint8_t>*>& fn_tags, int n_classes,
                           const SamplerOptions& opt, uint64_t seed, int layer_id) {
    if (opt.total_cap <= 0 || opt.fn_cap <= 0)
        throw ConfigError("sampling caps must be positive");
    if (labels_i.size() != fn_tags.size())
        throw DataError("sample_voxels: labels/tags batch size mismatch");

    SamplingPlan plan;
    plan.layer_id = layer_id;
    plan.total_cap = opt.total_cap;
    plan.fn_cap = opt.fn_cap;
    plan.rng_seed = seed;

    // Eligible voxels per class, split by tag. Build order (volume asc, index
    // asc) is part of the determinism contract.
    std::vector<std::vector<VoxelRef>> fn_pool(static_cast<size_t>(n_classes)), tp_pool(static_cast<size_t>(n_classes));
    for (size_t b = 0; b < labels_i.size(); ++b) {
        const Volume<uint8_t>& lbl = *labels_i[b];
        const Volume<uint8_t>& tag = *fn_tags[b];
        if (!(lbl.shape == tag.shape)) throw DataError("sample_voxels: label/tag shape mismatch");
        for (int64_t v = 0; v < lbl.size(); ++v) {
            const uint8_t cls = lbl[v];
            if (cls >= n_classes) throw DataError("sample_voxels: label value exceeds n_classes");
            if (cls == 0 && !opt.include_background) continue;
            auto& pool = tag[v] ? fn_pool[cls] : tp_pool[cls];
            pool.push_back({int(b), v});
        }
    }

    const bool any_foreground = [&] {
        for (int c = 1; c < n_classes; ++c)
            if (!fn_pool[size_t(c)].empty() || !tp_pool[size_t(c)].empty()) return true;
        return false;
    }();
    if (!any_foreground) return plan;  // empty plan; the feature loss skips the layer

    Rng rng(Rng::mix(seed, uint64_t(layer_id)));
    auto draw_pool = [&](std::vector<std::vector<VoxelRef>>& pools, int64_t budget, bool fn) {
        std::vector<int64_t> avail(pools.size());
        for (size_t c = 0; c < pools.size(); ++c) avail[c] = int64_t(pools[c].size());
        const std::vector<int64_t> quota = apportion(avail, budget);
        int64_t taken = 0;
        for (size_t c = 0; c < pools.size(); ++c) {
            if (quota[c] <= 0) continue;
            const auto picks = rng.sample_without_replacement(avail[c], quota[c]);
            for (int64_t i : picks)
                plan.entries.push_back({pools[c][size_t(i)], uint8_t(c), fn});
            taken += quota[c];
        }
        return taken;
    };

    const int64_t n_fn = draw_pool(fn_pool, std::min<int64_t>(opt.fn_cap, opt.total_cap), true);
    draw_pool(tp_pool, int64_t(opt.total_cap) - n_fn, false);
    return plan;
}

SamplingPlan sample_voxels(const Volume<uint8_t>& label_i, const Volume<uint8_t>& fn_tags,
                           int n_classes, const SamplerOptions& opt, uint64_t seed,
                           int layer_id) {
    return sample_voxels(std::vector<const Volume<uint8_t>*>{&label_i},
                         std::vector<const Volume<uint8_t>*>{&fn_tags}, n_classes, opt, seed,
                         layer_id);
}

void write_plan_json(const SamplingPlan& plan, const std::string& path) {
    nlohmann::json j;
    j["layer_id"] = plan.layer_id;
    j["total_cap"] = plan.total_cap;
    j["fn_cap"] = plan.fn_cap;
    j["rng_seed"] = plan.rng_seed;
    auto entries = nlohmann::json::array();
    for (const auto& e : plan.entries)
        entries.push_back({{"volume", e.ref.volume},
                           {"index", e.ref.index},
                           {"class", int(e.cls)},
                           {"tag", e.fn ? "FN" : "TP"}});
    j["entries"] = std::move(entries);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write sampling plan: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace voxelsim
