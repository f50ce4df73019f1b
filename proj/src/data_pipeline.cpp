#include "voxelsim/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "voxelsim/kernels.hpp"
#include "voxelsim/nifti.hpp"
#include "voxelsim/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace voxelsim {
namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << j.dump(2) << "\n";
}

struct RawHeader {
    Shape3 shape;
    std::array<double, 3> spacing;
    std::string dtype;
};

RawHeader read_sidecar(const std::string& raw_path) {
    const std::string sidecar = raw_path + ".json";
    if (!fs::exists(sidecar)) throw DataError("missing sidecar: " + sidecar);
    const json j = read_json_file(sidecar);
    RawHeader h;
    const auto sh = j.at("shape");
    if (sh.size() != 3) throw DataError("sidecar shape must have 3 entries: " + sidecar);
    h.shape = {sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>()};
    const auto sp = j.at("spacing");
    if (sp.size() != 3) throw DataError("sidecar spacing must have 3 entries: " + sidecar);
    h.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    for (double s : h.spacing)
        if (s <= 0.0) throw DataError("non-positive spacing in " + sidecar);
    h.dtype = j.value("dtype", "float32");
    return h;
}

void write_sidecar(const std::string& raw_path, Shape3 shape, const std::array<double, 3>& spacing,
                   const std::string& dtype) {
    write_json_file(raw_path + ".json", json{{"shape", {shape.nx, shape.ny, shape.nz}},
                                             {"spacing", {spacing[0], spacing[1], spacing[2]}},
                                             {"dtype", dtype}});
}

std::vector<char> read_bytes(const std::string& path, size_t expect) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<char> buf(expect);
    in.read(buf.data(), std::streamsize(expect));
    if (size_t(in.gcount()) != expect)
        throw DataError("file shorter than the sidecar claims: " + path);
    return buf;
}

bool is_raw(const std::string& path) { return fs::path(path).extension() == ".raw"; }

}  // namespace

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::vector<ManifestEntry> DatasetManifest::split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == tag) out.push_back(e);
    return out;
}

DatasetManifest DatasetManifest::load(const std::string& path, const std::string& data_root) {
    const json j = read_json_file(path);
    DatasetManifest m;
    for (const auto& c : j.at("classes")) m.class_names.push_back(c.get<std::string>());
    if (m.class_names.size() < 2)
        throw DataError("manifest needs background plus at least one class: " + path);

    fs::path root = data_root.empty() ? fs::path(path).parent_path() : fs::path(data_root);
    auto resolve = [&](std::string p) {
        fs::path fp(p);
        if (fp.is_relative()) fp = root / fp;
        return fp.string();
    };
    for (const auto& e : j.at("entries")) {
        ManifestEntry ent;
        ent.image = resolve(e.at("image").get<std::string>());
        ent.label = resolve(e.at("label").get<std::string>());
        ent.split = e.at("split").get<std::string>();
        if (ent.split != "train" && ent.split != "test")
            throw DataError("manifest split must be train or test, got '" + ent.split + "'");
        if (!fs::exists(ent.image)) throw DataError("manifest image missing: " + ent.image);
        if (!fs::exists(ent.label)) throw DataError("manifest label missing: " + ent.label);
        m.entries.push_back(std::move(ent));
    }
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    json entries_j = json::array();
    for (const auto& e : entries)
        entries_j.push_back({{"image", e.image}, {"label", e.label}, {"split", e.split}});
    write_json_file(path, json{{"classes", class_names}, {"entries", entries_j}});
}

// ---------------------------------------------------------------------------
// Raw volume I/O
// ---------------------------------------------------------------------------

void write_raw_image(const std::string& path, const Volume<double>& img,
                     const std::array<double, 3>& spacing) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    std::vector<float> f32(img.data.begin(), img.data.end());
    out.write(reinterpret_cast<const char*>(f32.data()),
              std::streamsize(f32.size() * sizeof(float)));
    write_sidecar(path, img.shape, spacing, "float32");
}

void write_raw_label(const std::string& path, const Volume<uint8_t>& lbl,
                     const std::array<double, 3>& spacing) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(lbl.data.data()), std::streamsize(lbl.data.size()));
    write_sidecar(path, lbl.shape, spacing, "uint8");
}

std::pair<Volume<double>, std::array<double, 3>> load_image(const std::string& path) {
    if (!fs::exists(path)) throw DataError("missing file: " + path);
    if (looks_like_nifti(path)) {
        NiftiImage n = read_nifti(path);
        Volume<double> v(n.shape);
        v.data = std::move(n.data);
        return {std::move(v), n.spacing};
    }
    if (!is_raw(path)) throw DataError("unreadable image format (expect .raw or .nii[.gz]): " + path);
    const RawHeader h = read_sidecar(path);
    Volume<double> v(h.shape);
    if (h.dtype == "float32") {
        const auto bytes = read_bytes(path, size_t(h.shape.voxels()) * sizeof(float));
        const float* p = reinterpret_cast<const float*>(bytes.data());
        for (int64_t i = 0; i < v.size(); ++i) v[i] = double(p[i]);
    } else if (h.dtype == "uint8") {
        const auto bytes = read_bytes(path, size_t(h.shape.voxels()));
        for (int64_t i = 0; i < v.size(); ++i) v[i] = double(uint8_t(bytes[size_t(i)]));
    } else {
        throw DataError("unsupported raw dtype '" + h.dtype + "': " + path);
    }
    return {std::move(v), h.spacing};
}

std::pair<Volume<uint8_t>, std::array<double, 3>> load_label(const std::string& path) {
    if (!fs::exists(path)) throw DataError("missing file: " + path);
    if (looks_like_nifti(path)) {
        NiftiImage n = read_nifti(path);
        Volume<uint8_t> v(n.shape);
        for (int64_t i = 0; i < v.size(); ++i) {
            const double x = std::round(n.data[size_t(i)]);
            if (x < 0.0 || x > 255.0)
                throw DataError("label value out of uint8 range in " + path);
            v[i] = uint8_t(x);
        }
        return {std::move(v), n.spacing};
    }
    if (!is_raw(path)) throw DataError("unreadable label format (expect .raw or .nii[.gz]): " + path);
    const RawHeader h = read_sidecar(path);
    if (h.dtype != "uint8") throw DataError("raw label must be uint8: " + path);
    const auto bytes = read_bytes(path, size_t(h.shape.voxels()));
    Volume<uint8_t> v(h.shape);
    std::memcpy(v.data.data(), bytes.data(), bytes.size());
    return {std::move(v), h.spacing};
}

VolumeSample load_volume(const std::string& image_path, const std::string& label_path) {
    VolumeSample s;
    auto [img, img_spacing] = load_image(image_path);
    auto [lbl, lbl_spacing] = load_label(label_path);
    if (!(img.shape == lbl.shape))
        throw DataError("image/label shape mismatch: " + img.shape.str() + " vs " +
                        lbl.shape.str() + " (" + image_path + ")");
    s.image = std::move(img);
    s.label = std::move(lbl);
    s.spacing = img_spacing;
    s.id = fs::path(image_path).stem().string();
    // strip a trailing ".nii" stem left by ".nii.gz"
    if (s.id.size() > 4 && s.id.compare(s.id.size() - 4, 4, ".nii") == 0)
        s.id = s.id.substr(0, s.id.size() - 4);
    return s;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

VolumeSample preprocess(const VolumeSample& sample, const PreprocessOptions& opt) {
    if (opt.window_lo >= opt.window_hi)
        throw ConfigError("window_lo must be below window_hi");
    if (opt.target_shape.nx < 4 || opt.target_shape.ny < 4 || opt.target_shape.nz < 4)
        throw ConfigError("preprocess target shape components must be >= 4");
    const Shape3 in_s = sample.image.shape;
    if (in_s.nx < 2 || in_s.ny < 2 || in_s.nz < 2)
        throw DataError("degenerate input shape " + in_s.str());

    // Window then normalize. The windowed range is deterministic, so min-max
    // to [0,1]; a z-score variant is switchable.
    Volume<double> windowed(in_s);
    const double lo = opt.window_lo, hi = opt.window_hi, inv = 1.0 / (hi - lo);
    for (int64_t i = 0; i < sample.image.size(); ++i) {
        const double v = std::clamp(sample.image[i], lo, hi);
        windowed[i] = (v - lo) * inv;
    }
    if (opt.zscore) {
        double s = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < windowed.size(); ++i) {
            s += windowed[i];
            s2 += windowed[i] * windowed[i];
        }
        const double m = s / double(windowed.size());
        const double sd = std::sqrt(std::max(1e-12, s2 / double(windowed.size()) - m * m));
        for (int64_t i = 0; i < windowed.size(); ++i) windowed[i] = (windowed[i] - m) / sd;
    }

    VolumeSample out;
    out.id = sample.id;
    out.image = Volume<double>(opt.target_shape);
    kernels::resample_trilinear(windowed.data.data(), in_s, out.image.data.data(),
                                opt.target_shape);
    out.label = Volume<uint8_t>(opt.target_shape);
    kernels::resample_nearest(sample.label.data.data(), in_s, out.label.data.data(),
                              opt.target_shape);
    out.spacing = {sample.spacing[0] * double(in_s.nx) / opt.target_shape.nx,
                   sample.spacing[1] * double(in_s.ny) / opt.target_shape.ny,
                   sample.spacing[2] * double(in_s.nz) / opt.target_shape.nz};
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic phantoms
// ---------------------------------------------------------------------------

namespace {

struct Ellipsoid {
    double cx, cy, cz;  // center, voxel units
    double rx, ry, rz;  // semi-axes, voxel units
    int cls;
    double hu;  // plateau intensity

    bool contains(int x, int y, int z) const {
        const double a = (x - cx) / rx, b = (y - cy) / ry, c = (z - cz) / rz;
        return a * a + b * b + c * c <= 1.0;
    }
};

}  // namespace

PhantomResult generate_synthetic_phantom(const PhantomSpec& spec) {
    if (spec.n_classes < 2) throw ConfigError("phantom needs at least 2 classes");
    const Shape3 s = spec.shape;
    if (s.nx < 8 || s.ny < 8 || s.nz < 8)
        throw DataError("phantom shape too small (each extent must be >= 8): " + s.str());

    std::vector<std::pair<int, int>> ranges = spec.organ_count_ranges;
    if (ranges.empty()) ranges.assign(size_t(spec.n_classes - 1), {1, 1});
    if (int(ranges.size()) != spec.n_classes - 1)
        throw ConfigError("organ_count_ranges must have one entry per foreground class");

    Rng rng(Rng::mix(spec.seed, 0x70686d74));
    const int min_dim = std::min({s.nx, s.ny, s.nz});

    std::vector<Ellipsoid> organs;
    for (int cls = 1; cls < spec.n_classes; ++cls) {
        const auto [lo, hi] = ranges[size_t(cls - 1)];
        if (lo < 0 || hi < lo) throw ConfigError("invalid organ count range");
        const int count = int(rng.range(lo, hi));
        for (int k = 0; k < count; ++k) {
            // Class-correlated plateau with a small per-organ jitter; stays
            // inside the soft-tissue window.
            const double hu = -60.0 + 40.0 * cls + rng.uniform(-8.0, 8.0);
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                Ellipsoid e;
                e.cls = cls;
                e.hu = hu;
                e.rx = rng.uniform(0.10, 0.22) * min_dim;
                e.ry = rng.uniform(0.10, 0.22) * min_dim;
                e.rz = rng.uniform(0.10, 0.22) * min_dim;
                e.rx = std::max(e.rx, 1.2);
                e.ry = std::max(e.ry, 1.2);
                e.rz = std::max(e.rz, 1.2);
                e.cx = rng.uniform(e.rx, s.nx - 1 - e.rx);
                e.cy = rng.uniform(e.ry, s.ny - 1 - e.ry);
                e.cz = rng.uniform(e.rz, s.nz - 1 - e.rz);
                bool overlap = false;
                for (const auto& o : organs) {
                    const double dx = (e.cx - o.cx), dy = (e.cy - o.cy), dz = (e.cz - o.cz);
                    const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                    const double r1 = std::max({e.rx, e.ry, e.rz});
                    const double r2 = std::max({o.rx, o.ry, o.rz});
                    if (dist < r1 + r2 + 1.0) {
                        overlap = true;
                        break;
                    }
                }
                if (!overlap) {
                    organs.push_back(e);
                    placed = true;
                }
            }
            if (!placed)
                throw DataError("phantom shape " + s.str() +
                                " too small to place the requested organs");
        }
    }

    PhantomResult res;
    res.sample.id = "phantom_" + std::to_string(spec.seed);
    res.sample.spacing = spec.spacing;
    res.sample.image = Volume<double>(s);
    res.sample.label = Volume<uint8_t>(s, 0);

    // Bookkeeping from the organ geometry (bounding-box enumeration). The
    // label pass below is independent; placement guarantees they agree.
    res.class_voxel_counts.assign(size_t(spec.n_classes), 0);
    for (const auto& e : organs) {
        const int x0 = std::max(0, int(std::floor(e.cx - e.rx)));
        const int x1 = std::min(s.nx - 1, int(std::ceil(e.cx + e.rx)));
        const int y0 = std::max(0, int(std::floor(e.cy - e.ry)));
        const int y1 = std::min(s.ny - 1, int(std::ceil(e.cy + e.ry)));
        const int z0 = std::max(0, int(std::floor(e.cz - e.rz)));
        const int z1 = std::min(s.nz - 1, int(std::ceil(e.cz + e.rz)));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x)
                    if (e.contains(x, y, z)) ++res.class_voxel_counts[size_t(e.cls)];
    }
    int64_t fg = 0;
    for (int cls = 1; cls < spec.n_classes; ++cls) fg += res.class_voxel_counts[size_t(cls)];
    res.class_voxel_counts[0] = s.voxels() - fg;

    const double bg_hu = -120.0;
    for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
            for (int x = 0; x < s.nx; ++x) {
                double hu = bg_hu + 0.15 * x - 0.1 * z;  // mild gradient, breaks uniformity
                int cls = 0;
                for (const auto& e : organs) {
                    if (e.contains(x, y, z)) {
                        hu = e.hu;
                        cls = e.cls;
                        break;
                    }
                }
                hu += rng.normal(0.0, spec.noise_hu);
                res.sample.image(x, y, z) = hu;
                res.sample.label(x, y, z) = uint8_t(cls);
            }

    // Placement guarantees every requested organ covers its center voxel.
    for (int cls = 1; cls < spec.n_classes; ++cls) {
        const auto [lo, hi] = ranges[size_t(cls - 1)];
        if (lo >= 1 && res.class_voxel_counts[size_t(cls)] == 0)
            throw DataError("phantom generation produced an empty class (internal error)");
    }
    return res;
}

}  // namespace voxelsim
