// voxelsim CLI: data prep, phantom synthesis, training, evaluation, embedding
// export, ablation sweeps, and plots.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxelsim/checkpoint.hpp"
#include "voxelsim/config.hpp"
#include "voxelsim/data_pipeline.hpp"
#include "voxelsim/metrics.hpp"
#include "voxelsim/svg_plots.hpp"
#include "voxelsim/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace voxelsim;

namespace {

std::string data_root() {
    const char* env = std::getenv("VOXELSIM_DATA_ROOT");
    return env ? env : "";
}

std::string timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (const auto& t : split_csv(s)) out.push_back(std::stoi(t));
    return out;
}

Shape3 parse_shape(const std::string& s) {
    const auto v = parse_ints(s);
    if (v.size() != 3) throw ConfigError("expected 3 comma-separated extents, got '" + s + "'");
    return {v[0], v[1], v[2]};
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            out += char(std::tolower(static_cast<unsigned char>(c)));
        else if (!out.empty() && out.back() != '-')
            out += '-';
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out;
}

// ---------------------------------------------------------------------------
// Shared train-config assembly: defaults <- config file <- typed flags <- --set
// ---------------------------------------------------------------------------

struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> sets;
    double lambda = -2.0;  // -2 = not set
    int epochs = -1;
    int64_t seed = -1;
    int batch_size = -1;
    int feature_layers = -1;
    int hidden_dim = -1;
    int embed_dim = -1;
    int depth = -1;
    int base_channels = -1;
    double lr = -1.0;
    double label_fraction = -1.0;
    double val_fraction = -1.0;
    std::string target_shape;
    std::string run_label;
    int weighted = -1;  // tri-state

    void add_options(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (TrainConfig schema)");
        cmd->add_option("--set", sets, "override a config key, e.g. --set unet.norm=none");
        cmd->add_option("--lambda", lambda, "feature loss weight (0 = plain 3D U-Net baseline)");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--seed", seed, "RNG seed");
        cmd->add_option("--batch-size", batch_size, "volumes per optimization step");
        cmd->add_option("--feature-layers", feature_layers, "|F|: encoder layers with heads");
        cmd->add_option("--hidden-dim", hidden_dim, "head hidden dimension");
        cmd->add_option("--embed-dim", embed_dim, "head embedding dimension");
        cmd->add_option("--depth", depth, "U-Net depth");
        cmd->add_option("--base-channels", base_channels, "U-Net base channels");
        cmd->add_option("--lr", lr, "base learning rate");
        cmd->add_option("--label-fraction", label_fraction, "fraction of train labels used");
        cmd->add_option("--val-fraction", val_fraction, "fraction of train set held out");
        cmd->add_option("--target-shape", target_shape, "preprocess grid, e.g. 128,128,64");
        cmd->add_option("--label", run_label, "report label for this run");
        cmd->add_flag("--weighted,!--no-weighted",
                      [this](int64_t v) { weighted = v > 0 ? 1 : 0; },
                      "class-weighted feature loss (Table IV axis)");
    }

    TrainConfig build(int n_classes_from_manifest) const {
        TrainConfig cfg;
        if (!config_path.empty()) cfg = load_train_config(config_path);
        if (lambda > -1.5) cfg.lambda_feature = lambda;
        if (epochs > 0) cfg.epochs = epochs;
        if (seed >= 0) cfg.seed = uint64_t(seed);
        if (batch_size > 0) cfg.batch_size = batch_size;
        if (feature_layers > 0) cfg.n_feature_layers = feature_layers;
        if (hidden_dim > 0) cfg.head.hidden_dim = hidden_dim;
        if (embed_dim > 0) cfg.head.embed_dim = embed_dim;
        if (depth > 0) cfg.unet.depth = depth;
        if (base_channels > 0) cfg.unet.base_channels = base_channels;
        if (lr > 0) cfg.base_lr = lr;
        if (label_fraction > 0) cfg.label_fraction = label_fraction;
        if (val_fraction >= 0) cfg.val_fraction = val_fraction;
        if (!target_shape.empty()) {
            const Shape3 s = parse_shape(target_shape);
            cfg.target_shape = {s.nx, s.ny, s.nz};
        }
        if (!run_label.empty()) cfg.run_label = run_label;
        if (weighted >= 0) cfg.weighted_loss = weighted == 1;
        if (n_classes_from_manifest > 0) cfg.unet.n_classes = n_classes_from_manifest;

        if (!sets.empty()) {
            json j = train_config_to_json(cfg);
            for (const auto& kv : sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw ConfigError("--set expects key=value, got '" + kv + "'");
                const std::string key = kv.substr(0, eq);
                const std::string val = kv.substr(eq + 1);
                json parsed;
                try {
                    parsed = json::parse(val);
                } catch (const json::exception&) {
                    parsed = val;  // bare string
                }
                json* cur = &j;
                size_t pos = 0;
                while (true) {
                    const auto dot = key.find('.', pos);
                    if (dot == std::string::npos) {
                        (*cur)[key.substr(pos)] = parsed;
                        break;
                    }
                    cur = &(*cur)[key.substr(pos, dot - pos)];
                    pos = dot + 1;
                }
            }
            return train_config_from_json(j);
        }
        cfg.validate();
        return cfg;
    }
};

std::string make_run_dir(const std::string& out_root, const std::string& explicit_dir,
                         const TrainConfig& cfg) {
    if (!explicit_dir.empty()) return explicit_dir;
    return out_root + "/" + timestamp() + "-" + config_hash(cfg);
}

MetricReport run_eval(const std::string& ckpt, const DatasetManifest& manifest,
                      const std::string& split, const std::string& out_dir,
                      const std::string& label) {
    EvalOptions eopt;
    eopt.split = split;
    eopt.label_override = label;
    MetricReport report = evaluate(ckpt, manifest, eopt);
    fs::create_directories(out_dir);
    report.write_csv(out_dir + "/report.csv");
    report.write_json(out_dir + "/report.json");
    std::cout << "[eval] " << report.label << ": avg DSC " << report.avg_dsc << ", HD95 "
              << report.avg_hd95 << " mm, ASSD " << report.avg_assd << " mm ("
              << report.param_count << " params)\n";
    return report;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, int count, int n_test, int64_t seed,
              const std::string& shape_s, int classes, double noise,
              const std::string& spacing_s) {
    const Shape3 shape = parse_shape(shape_s);
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    if (!spacing_s.empty()) {
        const auto parts = split_csv(spacing_s);
        if (parts.size() != 3) throw ConfigError("--spacing expects sx,sy,sz");
        for (int i = 0; i < 3; ++i) spacing[size_t(i)] = std::stod(parts[size_t(i)]);
    }
    if (count < 1) throw ConfigError("--count must be >= 1");
    if (n_test < 0 || n_test >= count) n_test = 0;

    fs::create_directories(out_dir);
    DatasetManifest manifest;
    manifest.class_names.push_back("background");
    for (int c = 1; c < classes; ++c) manifest.class_names.push_back("organ_" + std::to_string(c));

    for (int i = 0; i < count; ++i) {
        PhantomSpec spec;
        spec.seed = Rng::mix(uint64_t(seed), uint64_t(i));
        spec.shape = shape;
        spec.n_classes = classes;
        spec.spacing = spacing;
        spec.noise_hu = noise;
        const PhantomResult res = generate_synthetic_phantom(spec);
        char name[64];
        std::snprintf(name, sizeof(name), "phantom_%03d", i);
        const std::string img = out_dir + "/" + name + "_img.raw";
        const std::string lbl = out_dir + "/" + name + "_lbl.raw";
        write_raw_image(img, res.sample.image, res.sample.spacing);
        write_raw_label(lbl, res.sample.label, res.sample.spacing);
        manifest.entries.push_back({fs::path(img).filename().string(),
                                    fs::path(lbl).filename().string(),
                                    i >= count - n_test ? "test" : "train"});
    }
    manifest.save(out_dir + "/manifest.json");
    std::cout << "[synth] wrote " << count << " phantoms (" << count - n_test << " train, "
              << n_test << " test) to " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir, double lo,
                   double hi, const std::string& shape_s, bool zscore) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path, data_root());
    PreprocessOptions opt;
    opt.window_lo = lo;
    opt.window_hi = hi;
    if (!shape_s.empty()) opt.target_shape = parse_shape(shape_s);
    opt.zscore = zscore;

    fs::create_directories(out_dir);
    DatasetManifest out_manifest;
    out_manifest.class_names = manifest.class_names;
    for (const auto& e : manifest.entries) {
        VolumeSample s = load_volume(e.image, e.label);
        s = preprocess(s, opt);
        const std::string img = out_dir + "/" + s.id + "_proc_img.raw";
        const std::string lbl = out_dir + "/" + s.id + "_proc_lbl.raw";
        write_raw_image(img, s.image, s.spacing);
        write_raw_label(lbl, s.label, s.spacing);
        out_manifest.entries.push_back({fs::path(img).filename().string(),
                                        fs::path(lbl).filename().string(), e.split});
    }
    out_manifest.save(out_dir + "/manifest.json");
    std::cout << "[preprocess] wrote " << out_manifest.entries.size() << " volumes to " << out_dir
              << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const ConfigFlags& flags,
              const std::string& out_root, const std::string& run_dir_flag,
              const std::string& resume) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path, data_root());
    const TrainConfig cfg = flags.build(manifest.n_classes());
    const std::string run_dir = make_run_dir(out_root, run_dir_flag, cfg);
    Trainer trainer(cfg);
    std::cout << "[train] " << cfg.resolved_label() << " -> " << run_dir << " ("
              << trainer.model().count_parameters() << " params, lambda "
              << cfg.resolved_lambda() << ")\n";
    const TrainResult res = trainer.fit(manifest, run_dir, resume);
    std::cout << "[train] done: best val DSC " << res.best_val_dsc << ", final train DSC "
              << res.final_train_dsc << "\n";
    std::cout << "[train] checkpoints: " << res.best_checkpoint << " " << res.last_checkpoint
              << "\n";
    return 0;
}

int cmd_sweep(const std::string& manifest_path, const ConfigFlags& flags,
              const std::string& preset, const std::string& fractions_s,
              const std::string& methods, const std::string& seeds_s,
              const std::string& out_root) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path, data_root());
    const TrainConfig base = flags.build(manifest.n_classes());

    struct Run {
        TrainConfig cfg;
        std::string label;
        double fraction = 100.0;
        std::string axis;
    };
    std::vector<Run> runs;

    auto add_preset = [&](const std::string& p) {
        if (p == "table3") {
            for (int f : {1, 2, 3}) {
                Run r{base, "feature (" + std::to_string(f) + ")", 100.0, "table3"};
                r.cfg.n_feature_layers = f;
                r.cfg.lambda_feature = -1.0;  // auto: 100 for |F|=1, 10 otherwise
                r.cfg.run_label = r.label;
                runs.push_back(std::move(r));
            }
        } else if (p == "table4") {
            for (bool weighted : {false, true}) {
                Run r{base, weighted ? "feature" : "feature (w/o weight)", 100.0, "table4"};
                r.cfg.n_feature_layers = 3;
                r.cfg.lambda_feature = -1.0;
                r.cfg.weighted_loss = weighted;
                r.cfg.run_label = r.label;
                runs.push_back(std::move(r));
            }
        } else if (p == "table5") {
            // hidden-dim ablation; the paper's numbers line up with the
            // single-layer (|F|=1) configuration
            for (int h : {64, 128, 256}) {
                Run r{base, "feature (" + std::to_string(h) + ")", 100.0, "table5"};
                r.cfg.n_feature_layers = 1;
                r.cfg.lambda_feature = -1.0;
                r.cfg.head.hidden_dim = h;
                r.cfg.head.embed_dim = h;
                r.cfg.run_label = r.label;
                runs.push_back(std::move(r));
            }
        } else {
            throw ConfigError("unknown preset '" + p + "' (table3|table4|table5|all)");
        }
    };
    if (!preset.empty()) {
        if (preset == "all") {
            add_preset("table3");
            add_preset("table4");
            add_preset("table5");
        } else {
            add_preset(preset);
        }
    }
    if (!fractions_s.empty()) {
        for (int pct : parse_ints(fractions_s)) {
            if (pct <= 0 || pct > 100) throw ConfigError("fractions must be in (0,100]");
            if (methods == "both" || methods == "ours") {
                Run r{base, "ours @ " + std::to_string(pct) + "%", double(pct), "fractions"};
                r.cfg.label_fraction = pct / 100.0;
                r.cfg.run_label = "ours";
                runs.push_back(std::move(r));
            }
            if (methods == "both" || methods == "baseline") {
                Run r{base, "3D U-Net @ " + std::to_string(pct) + "%", double(pct), "fractions"};
                r.cfg.label_fraction = pct / 100.0;
                r.cfg.lambda_feature = 0.0;
                r.cfg.run_label = "3D U-Net";
                runs.push_back(std::move(r));
            }
        }
    }
    if (runs.empty()) throw ConfigError("sweep: nothing to run (give --preset and/or --fractions)");

    std::vector<uint64_t> seeds{base.seed};
    if (!seeds_s.empty()) {
        seeds.clear();
        for (int s : parse_ints(seeds_s)) seeds.push_back(uint64_t(s));
    }

    const std::string sweep_dir = out_root + "/" + timestamp() + "-sweep";
    fs::create_directories(sweep_dir);
    json summary = json::array();
    for (const auto& run : runs) {
        for (uint64_t seed : seeds) {
            TrainConfig cfg = run.cfg;
            cfg.seed = seed;
            const std::string dir = sweep_dir + "/" + sanitize(run.label) + "-f" +
                                    std::to_string(int(run.fraction)) + "-seed" +
                                    std::to_string(seed);
            std::cout << "[sweep] running " << run.label << " (seed " << seed << ")\n";
            Trainer trainer(cfg);
            const TrainResult tr = trainer.fit(manifest, dir);
            const std::string ckpt =
                fs::exists(tr.best_checkpoint) ? tr.best_checkpoint : tr.last_checkpoint;
            const MetricReport rep = run_eval(ckpt, manifest, "test", dir, run.label);
            summary.push_back({{"label", run.label},
                               {"axis", run.axis},
                               {"fraction", run.fraction},
                               {"seed", seed},
                               {"avg_dsc", rep.avg_dsc},
                               {"avg_hd95", rep.avg_hd95},
                               {"avg_assd", rep.avg_assd},
                               {"run_dir", dir},
                               {"report", dir + "/report.json"}});
        }
    }
    std::ofstream out(sweep_dir + "/sweep_summary.json");
    out << summary.dump(2) << "\n";
    std::cout << "[sweep] summary: " << sweep_dir << "/sweep_summary.json\n";

    // Fig. 7 reference trend (paper-scale, non-binding): 3D U-Net baseline
    // 0.431 at 10% of labels -> 0.786 at 100%.
    bool have_fractions = false;
    for (const auto& row : summary)
        if (row["axis"] == "fractions") have_fractions = true;
    if (have_fractions) {
        std::cout << "[sweep] label-fraction DSC ordering (paper reference: baseline "
                     "0.431@10% -> 0.786@100%, ours 0.548@10% -> 0.806@100%):\n";
        for (const auto& row : summary)
            if (row["axis"] == "fractions")
                std::cout << "  " << row["label"].get<std::string>() << " seed "
                          << row["seed"].get<uint64_t>() << ": DSC "
                          << row["avg_dsc"].get<double>() << "\n";
    }
    return 0;
}

int cmd_plot(const std::string& reports_s, const std::string& sweep_s,
             const std::string& out_dir) {
    fs::create_directories(out_dir);
    bool wrote = false;
    if (!reports_s.empty()) {
        std::vector<BoxSeries> series;
        std::vector<std::string> organs;
        for (const auto& path : split_csv(reports_s)) {
            std::ifstream in(path);
            if (!in) throw DataError("cannot open report: " + path);
            json j;
            in >> j;
            BoxSeries s;
            s.label = j.at("label").get<std::string>();
            const auto names = j.at("organs").get<std::vector<std::string>>();
            if (organs.empty()) organs = names;
            s.groups.resize(organs.size());
            for (const auto& c : j.at("cases")) {
                const auto d = c.at("dsc").get<std::vector<double>>();
                for (size_t o = 0; o < std::min(d.size(), organs.size()); ++o)
                    s.groups[o].push_back(d[o]);
            }
            series.push_back(std::move(s));
        }
        write_boxplot_svg(out_dir + "/dsc_boxplot.svg", organs, series,
                          "Per-organ DSC by method");
        std::cout << "[plot] wrote " << out_dir << "/dsc_boxplot.svg\n";
        wrote = true;
    }
    if (!sweep_s.empty()) {
        std::ifstream in(sweep_s);
        if (!in) throw DataError("cannot open sweep summary: " + sweep_s);
        json summary;
        in >> summary;
        std::map<std::string, std::map<double, std::pair<double, int>>> acc;  // label -> x -> (sum,n)
        for (const auto& row : summary) {
            if (row.value("axis", "") != "fractions") continue;
            std::string label = row.at("label").get<std::string>();
            const auto at = label.find(" @ ");
            if (at != std::string::npos) label = label.substr(0, at);
            auto& cell = acc[label][row.at("fraction").get<double>()];
            cell.first += row.at("avg_dsc").get<double>();
            cell.second += 1;
        }
        if (acc.empty()) throw DataError("sweep summary has no fraction runs");
        std::vector<CurveSeries> series;
        for (const auto& [label, pts] : acc) {
            CurveSeries s;
            s.label = label;
            for (const auto& [x, cell] : pts) s.points.push_back({x, cell.first / cell.second});
            series.push_back(std::move(s));
        }
        write_curve_svg(out_dir + "/label_fraction.svg", "% of labels", "DSC", series,
                        "Test DSC vs label fraction");
        std::cout << "[plot] wrote " << out_dir << "/label_fraction.svg\n";
        wrote = true;
    }
    if (!wrote) throw ConfigError("plot: give --reports and/or --sweep");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxel-level Siamese representation learning for multi-organ segmentation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
    std::string s_out = "data/synthetic", s_shape = "32,32,16", s_spacing;
    int s_count = 10, s_test = 0, s_classes = 3;
    int64_t s_seed = 7;
    double s_noise = 12.0;
    synth->add_option("--out", s_out, "output directory");
    synth->add_option("--count", s_count, "number of phantoms");
    synth->add_option("--test", s_test, "how many of the phantoms form the test split");
    synth->add_option("--seed", s_seed, "dataset seed");
    synth->add_option("--shape", s_shape, "grid extents, e.g. 32,32,16");
    synth->add_option("--classes", s_classes, "class count including background");
    synth->add_option("--noise", s_noise, "intensity noise sigma (HU)");
    synth->add_option("--spacing", s_spacing, "voxel spacing in mm, e.g. 1,1,2.5");

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "window, normalize and resample a dataset");
    std::string p_manifest, p_out = "data/processed", p_shape;
    double p_lo = -200.0, p_hi = 250.0;
    bool p_zscore = false;
    prep->add_option("--manifest", p_manifest, "dataset manifest")->required();
    prep->add_option("--out", p_out, "output directory");
    prep->add_option("--window-lo", p_lo, "window lower bound (HU)");
    prep->add_option("--window-hi", p_hi, "window upper bound (HU)");
    prep->add_option("--shape", p_shape, "target grid, e.g. 128,128,64");
    prep->add_flag("--zscore", p_zscore, "z-score normalization instead of [0,1]");

    // train
    auto* train = app.add_subcommand("train", "train the segmentation network");
    std::string t_manifest, t_out_root = "runs", t_run_dir, t_resume;
    ConfigFlags t_flags;
    train->add_option("--manifest", t_manifest, "dataset manifest")->required();
    train->add_option("--out-root", t_out_root, "runs root (run dir = timestamp + config hash)");
    train->add_option("--run-dir", t_run_dir, "exact run directory (overrides --out-root)");
    train->add_option("--resume", t_resume, "checkpoint to resume from");
    t_flags.add_options(train);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (DSC/HD95/ASSD)");
    std::string e_ckpt, e_manifest, e_split = "test", e_out, e_label;
    eval_cmd->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", e_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--split", e_split, "manifest split to evaluate");
    eval_cmd->add_option("--out", e_out, "report directory (default: checkpoint's directory)");
    eval_cmd->add_option("--label", e_label, "override the report label");

    // embed-export
    auto* embed = app.add_subcommand("embed-export", "export sampled z embeddings to CSV");
    std::string x_ckpt, x_manifest, x_split = "test", x_layers = "1,2,3", x_out = "embeddings.csv";
    int x_cap = 1000;
    int64_t x_seed = 0;
    embed->add_option("--checkpoint", x_ckpt, "training checkpoint (with heads)")->required();
    embed->add_option("--manifest", x_manifest, "dataset manifest")->required();
    embed->add_option("--split", x_split, "manifest split");
    embed->add_option("--layers", x_layers, "1-based feature layer ids, e.g. 1,2,3");
    embed->add_option("--cap", x_cap, "max rows per layer per volume");
    embed->add_option("--out", x_out, "output CSV");
    embed->add_option("--seed", x_seed, "sampling seed");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "ablation presets and label-fraction studies");
    std::string w_manifest, w_preset, w_fractions, w_methods = "both", w_seeds,
                w_out_root = "runs";
    ConfigFlags w_flags;
    sweep->add_option("--manifest", w_manifest, "dataset manifest")->required();
    sweep->add_option("--preset", w_preset, "table3 | table4 | table5 | all");
    sweep->add_option("--fractions", w_fractions, "label percentages, e.g. 10,20,50,100");
    sweep->add_option("--methods", w_methods, "fraction runs: both | ours | baseline");
    sweep->add_option("--seeds", w_seeds, "comma-separated seeds (default: config seed)");
    sweep->add_option("--out-root", w_out_root, "sweep output root");
    w_flags.add_options(sweep);

    // plot
    auto* plot = app.add_subcommand("plot", "render SVG plots from reports and sweep summaries");
    std::string g_reports, g_sweep, g_out = "plots";
    plot->add_option("--reports", g_reports, "comma-separated report.json files (box plots)");
    plot->add_option("--sweep", g_sweep, "sweep_summary.json (label-fraction curve)");
    plot->add_option("--out", g_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "{\"error\":\"invalid command line\",\"type\":\"config\"}\n";
        return 2;
    }

    try {
        if (*synth)
            return cmd_synth(s_out, s_count, s_test, s_seed, s_shape, s_classes, s_noise,
                             s_spacing);
        if (*prep) return cmd_preprocess(p_manifest, p_out, p_lo, p_hi, p_shape, p_zscore);
        if (*train) return cmd_train(t_manifest, t_flags, t_out_root, t_run_dir, t_resume);
        if (*eval_cmd) {
            const DatasetManifest manifest = DatasetManifest::load(e_manifest, data_root());
            const std::string out_dir =
                e_out.empty() ? fs::path(e_ckpt).parent_path().string() : e_out;
            run_eval(e_ckpt, manifest, e_split, out_dir.empty() ? "." : out_dir, e_label);
            return 0;
        }
        if (*embed) {
            const DatasetManifest manifest = DatasetManifest::load(x_manifest, data_root());
            const int64_t rows =
                export_embeddings(x_ckpt, manifest, x_split, parse_ints(x_layers), x_cap, x_out,
                                  uint64_t(x_seed));
            std::cout << "[embed-export] wrote " << rows << " rows to " << x_out << "\n";
            return 0;
        }
        if (*sweep)
            return cmd_sweep(w_manifest, w_flags, w_preset, w_fractions, w_methods, w_seeds,
                             w_out_root);
        if (*plot) return cmd_plot(g_reports, g_sweep, g_out);
    } catch (const ConfigError& e) {
        std::cerr << "{\"error\":\"" << e.what() << "\",\"type\":\"config\"}\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "{\"error\":\"" << e.what() << "\",\"type\":\"data\"}\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "{\"error\":\"" << e.what() << "\",\"type\":\"numeric\"}\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "{\"error\":\"" << e.what() << "\",\"type\":\"internal\"}\n";
        return 1;
    }
    return 0;
}
