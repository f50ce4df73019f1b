#include "voxelsim/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "voxelsim/metrics.hpp"
#include "voxelsim/sampler.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace voxelsim {

double poly_lr(int epoch, int total_epochs, double base_lr, double power) {
    if (epoch < 0 || total_epochs <= 0 || epoch > total_epochs)
        throw ConfigError("poly_lr: epoch outside [0, total_epochs]");
    return base_lr * std::pow(1.0 - double(epoch) / double(total_epochs), power);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::attach(std::vector<ParamRef> params, double weight_decay) {
    params_ = std::move(params);
    wd_ = weight_decay;
    t_ = 0;
    m_.clear();
    v_.clear();
    for (const auto& p : params_) {
        m_.emplace_back(p.value->size(), 0.0);
        v_.emplace_back(p.value->size(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

void Adam::step(double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(b1, double(t_));
    const double bc2 = 1.0 - std::pow(b2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& w = *params_[i].value;
        auto& g = *params_[i].grad;
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < w.size(); ++j) {
            const double grad = g[j] + wd_ * w[j];
            m[j] = b1 * m[j] + (1.0 - b1) * grad;
            v[j] = b2 * v[j] + (1.0 - b2) * grad * grad;
            w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
    }
}

std::map<std::string, std::vector<double>> Adam::state() const {
    std::map<std::string, std::vector<double>> out;
    for (size_t i = 0; i < params_.size(); ++i) {
        out["m." + params_[i].name] = m_[i];
        out["v." + params_[i].name] = v_[i];
    }
    out["t"] = {double(t_)};
    return out;
}

void Adam::load_state(const std::map<std::string, std::vector<double>>& tensors) {
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto mi = tensors.find("m." + params_[i].name);
        const auto vi = tensors.find("v." + params_[i].name);
        if (mi == tensors.end() || vi == tensors.end())
            throw DataError("optimizer state missing for '" + params_[i].name + "'");
        if (mi->second.size() != m_[i].size()) throw DataError("optimizer state size mismatch");
        m_[i] = mi->second;
        v_[i] = vi->second;
    }
    const auto ti = tensors.find("t");
    t_ = ti != tensors.end() && !ti->second.empty() ? int64_t(ti->second[0]) : 0;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng model_rng(Rng::mix(cfg_.seed, 0x6d6f64656c));
    model_ = UNet3D(cfg_.unet, model_rng);
    Rng head_rng(Rng::mix(cfg_.seed, 0x68656164));
    heads_ = VoxelHeads(cfg_.head, model_.feature_layer_dims(cfg_.n_feature_layers), head_rng);
    auto params = model_.params();
    for (auto& p : heads_.params()) params.push_back(p);
    opt_.attach(std::move(params), cfg_.weight_decay);
}

Volume<uint8_t> Trainer::predict(const VolumeSample& sample) {
    UNetContext ctx;
    const FeaturePyramid pyr = model_.forward(sample.image, 0, ctx);
    return argmax_channels(*pyr.score);
}

double Trainer::mean_foreground_dsc(const std::vector<VolumeSample>& vols) {
    if (vols.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : vols) {
        const Volume<uint8_t> pred = predict(s);
        double acc = 0.0;
        int n = 0;
        for (int c = 1; c < cfg_.unet.n_classes; ++c) {
            Volume<uint8_t> pm(pred.shape), gm(s.label.shape);
            bool gt_any = false;
            for (int64_t i = 0; i < pred.size(); ++i) {
                pm[i] = pred[i] == c;
                gm[i] = s.label[i] == c;
                gt_any = gt_any || gm[i];
            }
            if (!gt_any) continue;
            acc += dsc(pm, gm);
            ++n;
        }
        total += n ? acc / n : 1.0;
    }
    return total / double(vols.size());
}

LossReport Trainer::train_step(const std::vector<const VolumeSample*>& batch, int epoch,
                               int step_in_epoch) {
    const int B = int(batch.size());
    if (B == 0) throw DataError("empty batch");
    const double lambda = cfg_.resolved_lambda();
    const int nF = cfg_.n_feature_layers;
    const bool feature_on = lambda != 0.0;

    opt_.zero_grad();

    std::vector<UNetContext> ctx(static_cast<size_t>(B));
    std::vector<FeaturePyramid> pyr(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b)
        pyr[size_t(b)] = model_.forward(batch[size_t(b)]->image, feature_on ? nF : 0,
                                        ctx[size_t(b)]);

    LossReport rep;
    rep.lambda = lambda;
    rep.per_class_dice.assign(size_t(cfg_.unet.n_classes), 0.0);

    std::vector<Fmap> dscore(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        const Fmap& score = *pyr[size_t(b)].score;
        dscore[size_t(b)] = Fmap(score.spatial(), score.nc, 0.0);
        const DiceResult dr = dice_loss_on_scores(score, batch[size_t(b)]->label,
                                                  &dscore[size_t(b)], 1.0 / B);
        rep.dice_loss += dr.loss / B;
        for (int c = 0; c < cfg_.unet.n_classes; ++c)
            rep.per_class_dice[size_t(c)] += dr.per_class[size_t(c)] / B;
    }

    // volume -> (feature layer idx, dF) injections for the backbone backward
    std::vector<std::vector<std::pair<int, Fmap>>> fgrads(static_cast<size_t>(B));

    if (feature_on) {
        struct Group {
            int layer_idx = 0, volume = 0;
            std::vector<int64_t> voxels;
            std::vector<uint8_t> cls;
            EmbedCache cache;
            int64_t row0 = 0;
        };
        std::vector<Group> groups;

        const uint64_t step_seed =
            Rng::mix(cfg_.seed, uint64_t(epoch) * 1000003ULL + uint64_t(step_in_epoch));
        SamplerOptions sopt;
        sopt.total_cap = cfg_.total_cap;
        sopt.fn_cap = cfg_.fn_cap;
        sopt.include_background = cfg_.sample_background;

        for (int li = 0; li < nF; ++li) {
            std::vector<Volume<uint8_t>> labels_i(static_cast<size_t>(B)), tags(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b) {
                const Shape3 lshape = pyr[size_t(b)].features[size_t(li)]->spatial();
                labels_i[size_t(b)] = downsample_label(batch[size_t(b)]->label, lshape);
                tags[size_t(b)] =
                    classify_voxels(labels_i[size_t(b)], *pyr[size_t(b)].score, lshape);
            }
            SamplingPlan plan;
            if (cfg_.per_volume_caps) {
                plan.layer_id = li + 1;
                for (int b = 0; b < B; ++b) {
                    SamplingPlan pb =
                        sample_voxels(labels_i[size_t(b)], tags[size_t(b)], cfg_.unet.n_classes,
                                      sopt, Rng::mix(step_seed, uint64_t(b) * 31 + uint64_t(li)),
                                      li + 1);
                    for (auto e : pb.entries) {
                        e.ref.volume = b;
                        plan.entries.push_back(e);
                    }
                }
            } else {
                std::vector<const Volume<uint8_t>*> lp, tp;
                for (int b = 0; b < B; ++b) {
                    lp.push_back(&labels_i[size_t(b)]);
                    tp.push_back(&tags[size_t(b)]);
                }
                plan = sample_voxels(lp, tp, cfg_.unet.n_classes, sopt,
                                     Rng::mix(step_seed, uint64_t(li)), li + 1);
            }
            for (int b = 0; b < B; ++b) {
                Group g;
                g.layer_idx = li;
                g.volume = b;
                for (const auto& e : plan.entries)
                    if (e.ref.volume == b) {
                        g.voxels.push_back(e.ref.index);
                        g.cls.push_back(e.cls);
                    }
                if (!g.voxels.empty()) groups.push_back(std::move(g));
            }
        }

        EmbeddingBatch all;
        for (auto& g : groups) {
            g.row0 = all.size();
            EmbeddingBatch eb =
                heads_.embed(*pyr[size_t(g.volume)].features[size_t(g.layer_idx)], g.voxels,
                             g.layer_idx, g.volume, g.cache);
            for (int64_t i = 0; i < eb.size(); ++i) eb.class_id[size_t(i)] = g.cls[size_t(i)];
            all.append(eb);
        }
        rep.sampled_voxels = all.size();

        if (all.size() > 0) {
            FeatureLossOptions fopt;
            fopt.weighted = cfg_.weighted_loss;
            fopt.pooled_layers = cfg_.pooled_layers;
            fopt.layer_weights = cfg_.layer_weights;
            Mat dP(all.size(), cfg_.head.embed_dim, 0.0);
            const FeatureLossResult fr = feature_loss(all, fopt, &dP, nullptr, lambda);
            rep.feature_loss = fr.value;
            rep.per_class_similarity = fr.per_class_similarity;
            rep.feature_classes = fr.classes;
            rep.w_c = fr.weights;
            if (fr.empty)
                std::cerr << "[voxelsim] warn: no class with >= 2 sampled voxels; feature loss "
                             "is 0 this step\n";

            for (auto& g : groups) {
                const int64_t n = int64_t(g.voxels.size());
                Mat dp(n, dP.d);
                std::copy_n(dP.row(g.row0), size_t(n) * dP.d, dp.v.data());
                const Mat df = heads_.backward_embed(g.layer_idx, g.cache, dp, nullptr);

                auto& vgrads = fgrads[size_t(g.volume)];
                Fmap* targ = nullptr;
                for (auto& [idx, fm] : vgrads)
                    if (idx == g.layer_idx) targ = &fm;
                if (!targ) {
                    const Fmap& feat = *pyr[size_t(g.volume)].features[size_t(g.layer_idx)];
                    vgrads.emplace_back(g.layer_idx, Fmap(feat.spatial(), feat.nc, 0.0));
                    targ = &vgrads.back().second;
                }
                for (int64_t i = 0; i < n; ++i) {
                    double* dst = targ->row(g.voxels[size_t(i)]);
                    const double* src = df.row(i);
                    for (int j = 0; j < df.d; ++j) dst[j] += src[j];
                }
            }
        }
    }

    rep.total = total_loss(rep.dice_loss, rep.feature_loss, lambda);
    if (!std::isfinite(rep.total))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step_in_epoch) + " (dice=" +
                           std::to_string(rep.dice_loss) +
                           ", feature=" + std::to_string(rep.feature_loss) + ")");

    for (int b = 0; b < B; ++b)
        model_.backward(ctx[size_t(b)], dscore[size_t(b)], fgrads[size_t(b)]);
    opt_.step(poly_lr(epoch, cfg_.epochs, cfg_.base_lr, cfg_.poly_power));
    return rep;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

namespace {

VolumeSample crop_sample(const VolumeSample& s, const std::array<int, 3>& patch, Rng& rng) {
    const Shape3 in = s.image.shape;
    const Shape3 want{std::min(patch[0], in.nx), std::min(patch[1], in.ny),
                      std::min(patch[2], in.nz)};
    const int ox = int(rng.range(0, in.nx - want.nx));
    const int oy = int(rng.range(0, in.ny - want.ny));
    const int oz = int(rng.range(0, in.nz - want.nz));
    VolumeSample out;
    out.id = s.id;
    out.spacing = s.spacing;
    out.image = Volume<double>(want);
    out.label = Volume<uint8_t>(want);
    for (int z = 0; z < want.nz; ++z)
        for (int y = 0; y < want.ny; ++y)
            for (int x = 0; x < want.nx; ++x) {
                out.image(x, y, z) = s.image(x + ox, y + oy, z + oz);
                out.label(x, y, z) = s.label(x + ox, y + oy, z + oz);
            }
    return out;
}

}  // namespace

TrainResult Trainer::fit(const DatasetManifest& manifest, const std::string& run_dir,
                         const std::string& resume_path) {
    fs::create_directories(run_dir);
    TrainResult res;
    res.run_dir = run_dir;
    res.config_path = run_dir + "/config.json";
    res.log_path = run_dir + "/train_log.jsonl";
    res.best_checkpoint = run_dir + "/best.ckpt";
    res.last_checkpoint = run_dir + "/last.ckpt";
    save_train_config(cfg_, res.config_path);

    auto train_entries = manifest.split("train");
    if (train_entries.empty()) throw DataError("empty training split");
    if (manifest.n_classes() != cfg_.unet.n_classes)
        throw DataError("manifest has " + std::to_string(manifest.n_classes()) +
                        " classes but the model expects " + std::to_string(cfg_.unet.n_classes));

    // Label-fraction study: keep a seeded subset of the annotated volumes.
    if (cfg_.label_fraction < 1.0) {
        Rng sel(Rng::mix(cfg_.seed, 0x1abe1f));
        std::vector<size_t> idx(train_entries.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        sel.shuffle(idx);
        const size_t keep = std::max<size_t>(
            1, size_t(std::llround(cfg_.label_fraction * double(train_entries.size()))));
        std::vector<ManifestEntry> subset;
        for (size_t i = 0; i < keep; ++i) subset.push_back(train_entries[idx[i]]);
        train_entries = std::move(subset);
    }

    PreprocessOptions popt;
    popt.window_lo = cfg_.window_lo;
    popt.window_hi = cfg_.window_hi;
    popt.target_shape = {cfg_.target_shape[0], cfg_.target_shape[1], cfg_.target_shape[2]};
    popt.zscore = cfg_.zscore_normalize;

    std::vector<VolumeSample> vols;
    for (const auto& e : train_entries) {
        VolumeSample s = load_volume(e.image, e.label);
        if (cfg_.preprocess_inputs) s = preprocess(s, popt);
        for (int64_t i = 0; i < s.label.size(); ++i)
            if (s.label[i] >= cfg_.unet.n_classes)
                throw DataError("label value " + std::to_string(int(s.label[i])) +
                                " exceeds n_classes in " + s.id);
        vols.push_back(std::move(s));
    }

    // Validation split carved from the training data (test stays untouched).
    std::vector<size_t> order(vols.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng val_rng(Rng::mix(cfg_.seed, 0x5a11d));
    val_rng.shuffle(order);
    const size_t n_val = size_t(cfg_.val_fraction * double(vols.size()));
    std::vector<VolumeSample> val_vols;
    std::vector<size_t> train_idx;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i < n_val)
            val_vols.push_back(vols[order[i]]);
        else
            train_idx.push_back(order[i]);
    }
    const bool val_is_train = val_vols.empty();

    int start_epoch = 0;
    double best = -1.0;
    if (!resume_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(resume_path);
        for (auto& p : model_.params()) {
            auto it = ckpt.tensors.find(p.name);
            if (it == ckpt.tensors.end()) throw DataError("resume: missing " + p.name);
            *p.value = it->second;
        }
        if (ckpt.heads_included)
            for (auto& p : heads_.params()) {
                auto it = ckpt.tensors.find(p.name);
                if (it == ckpt.tensors.end()) throw DataError("resume: missing " + p.name);
                *p.value = it->second;
            }
        std::map<std::string, std::vector<double>> opt_state;
        for (const auto& [name, data] : ckpt.tensors)
            if (name.rfind("opt.", 0) == 0) opt_state[name.substr(4)] = data;
        if (!opt_state.empty()) opt_.load_state(opt_state);
        start_epoch = ckpt.epoch + 1;
        best = ckpt.best_val_dsc;
    }

    std::ofstream log(res.log_path, start_epoch > 0 ? std::ios::app : std::ios::out);
    if (!log) throw DataError("cannot write training log: " + res.log_path);
    log << json{{"type", "run"},
                {"label", cfg_.resolved_label()},
                {"params", model_.count_parameters()},
                {"n_train", train_idx.size()},
                {"n_val", val_vols.size()},
                {"val_is_train", val_is_train},
                {"resumed_from", resume_path},
                {"start_epoch", start_epoch}}
               .dump()
        << "\n";

    for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<size_t> perm = train_idx;
        Rng(Rng::mix(cfg_.seed, 0xe70c + uint64_t(epoch))).shuffle(perm);

        double mean_dice = 0.0, mean_feat = 0.0, mean_total = 0.0;
        int n_steps = 0;
        Rng patch_rng(Rng::mix(cfg_.seed, 0x9a7c4 + uint64_t(epoch)));
        for (size_t off = 0; off < perm.size(); off += size_t(cfg_.batch_size)) {
            std::vector<VolumeSample> patches;
            std::vector<const VolumeSample*> batch;
            for (size_t i = off; i < std::min(perm.size(), off + size_t(cfg_.batch_size)); ++i) {
                if (cfg_.use_patches())
                    patches.push_back(crop_sample(vols[perm[i]], cfg_.patch_shape, patch_rng));
                else
                    batch.push_back(&vols[perm[i]]);
            }
            for (const auto& p : patches) batch.push_back(&p);
            const LossReport rep = train_step(batch, epoch, n_steps);
            mean_dice += rep.dice_loss;
            mean_feat += rep.feature_loss;
            mean_total += rep.total;
            ++n_steps;
            log << json{{"type", "step"},
                        {"epoch", epoch},
                        {"step", n_steps - 1},
                        {"lr", poly_lr(epoch, cfg_.epochs, cfg_.base_lr, cfg_.poly_power)},
                        {"dice", rep.dice_loss},
                        {"feature", rep.feature_loss},
                        {"total", rep.total},
                        {"lambda", rep.lambda},
                        {"sampled", rep.sampled_voxels},
                        {"per_class_dice", rep.per_class_dice},
                        {"w_c", rep.w_c}}
                       .dump()
                << "\n";
        }

        const double val_dsc = mean_foreground_dsc(val_is_train ? vols : val_vols);
        const bool improved = val_dsc > best;
        if (improved) {
            best = val_dsc;
            save_checkpoint(res.best_checkpoint,
                            make_checkpoint(cfg_, model_, &heads_, {}, epoch, best));
        }
        save_checkpoint(res.last_checkpoint,
                        make_checkpoint(cfg_, model_, &heads_, opt_.state(), epoch, best));
        if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0)
            save_checkpoint(run_dir + "/epoch_" + std::to_string(epoch) + ".ckpt",
                            make_checkpoint(cfg_, model_, &heads_, opt_.state(), epoch, best));

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << json{{"type", "epoch"},
                    {"epoch", epoch},
                    {"lr", poly_lr(epoch, cfg_.epochs, cfg_.base_lr, cfg_.poly_power)},
                    {"mean_dice", n_steps ? mean_dice / n_steps : 0.0},
                    {"mean_feature", n_steps ? mean_feat / n_steps : 0.0},
                    {"mean_total", n_steps ? mean_total / n_steps : 0.0},
                    {"val_dsc", val_dsc},
                    {"best_val_dsc", best},
                    {"seconds", secs}}
                   .dump()
            << "\n";
        log.flush();
        res.epochs_run = epoch + 1;
    }

    res.best_val_dsc = best;
    res.final_train_dsc = mean_foreground_dsc(vols);
    std::ofstream summary(run_dir + "/summary.json");
    summary << json{{"label", cfg_.resolved_label()},
                    {"best_val_dsc", res.best_val_dsc},
                    {"final_train_dsc", res.final_train_dsc},
                    {"epochs", res.epochs_run},
                    {"params", model_.count_parameters()},
                    {"lambda", cfg_.resolved_lambda()},
                    {"n_feature_layers", cfg_.n_feature_layers},
                    {"hidden_dim", cfg_.head.hidden_dim},
                    {"weighted_loss", cfg_.weighted_loss},
                    {"label_fraction", cfg_.label_fraction},
                    {"seed", cfg_.seed}}
                   .dump(2)
            << "\n";
    return res;
}

}  // namespace voxelsim
