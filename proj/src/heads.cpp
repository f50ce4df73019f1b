#include "voxelsim/heads.hpp"

#include <cmath>

#include "voxelsim/kernels.hpp"

namespace voxelsim {

namespace {
constexpr double kLnEps = 1e-5;
}

void EmbeddingBatch::append(const EmbeddingBatch& other) {
    if (other.size() == 0) return;
    if (size() == 0) {
        *this = other;
        return;
    }
    if (p.d != other.p.d) throw NumericError("embedding dim mismatch in append");
    p.v.insert(p.v.end(), other.p.v.begin(), other.p.v.end());
    z.v.insert(z.v.end(), other.z.v.begin(), other.z.v.end());
    p.n += other.p.n;
    z.n += other.z.n;
    class_id.insert(class_id.end(), other.class_id.begin(), other.class_id.end());
    layer_id.insert(layer_id.end(), other.layer_id.begin(), other.layer_id.end());
    volume_id.insert(volume_id.end(), other.volume_id.begin(), other.volume_id.end());
    voxel_index.insert(voxel_index.end(), other.voxel_index.begin(), other.voxel_index.end());
}

Mat stop_gradient(const Mat& z) { return z; }

void LinearParams::init(int din_, int dout_, Rng& rng) {
    din = din_;
    dout = dout_;
    w.resize(size_t(dout) * din);
    b.assign(size_t(dout), 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
    const double s = std::sqrt(2.0 / din);
    for (auto& x : w) x = rng.normal(0.0, s);
}

void NormParams::init(int dim_) {
    dim = dim_;
    gamma.assign(size_t(dim), 1.0);
    beta.assign(size_t(dim), 0.0);
    ggamma.assign(size_t(dim), 0.0);
    gbeta.assign(size_t(dim), 0.0);
}

void Mlp::init(int din, int hidden, int dout, bool use_norm_, bool final_norm_, Rng& rng) {
    use_norm = use_norm_;
    final_norm = final_norm_;
    fc1.init(din, hidden, rng);
    fc2.init(hidden, dout, rng);
    ln1.init(hidden);
    ln2.init(dout);
}

const Mat& Mlp::forward(const Mat& x, MlpCache& c) const {
    const int64_t n = x.n;
    c.x = x;
    c.a1 = Mat(n, fc1.dout);
    kernels::linear_forward(x.v.data(), fc1.w.data(), fc1.b.data(), c.a1.v.data(), n, fc1.din,
                            fc1.dout);
    const Mat* pre_relu = &c.a1;
    if (use_norm) {
        c.n1 = Mat(n, fc1.dout);
        c.ln1_mean.resize(size_t(n));
        c.ln1_invstd.resize(size_t(n));
        kernels::layer_norm_forward(c.a1.v.data(), c.n1.v.data(), ln1.gamma.data(),
                                    ln1.beta.data(), c.ln1_mean.data(), c.ln1_invstd.data(), n,
                                    fc1.dout, kLnEps);
        pre_relu = &c.n1;
    }
    c.r1 = Mat(n, fc1.dout);
    kernels::relu_forward(pre_relu->v.data(), c.r1.v.data(), n * fc1.dout);
    c.a2 = Mat(n, fc2.dout);
    kernels::linear_forward(c.r1.v.data(), fc2.w.data(), fc2.b.data(), c.a2.v.data(), n, fc2.din,
                            fc2.dout);
    if (use_norm && final_norm) {
        c.out = Mat(n, fc2.dout);
        c.ln2_mean.resize(size_t(n));
        c.ln2_invstd.resize(size_t(n));
        kernels::layer_norm_forward(c.a2.v.data(), c.out.v.data(), ln2.gamma.data(),
                                    ln2.beta.data(), c.ln2_mean.data(), c.ln2_invstd.data(), n,
                                    fc2.dout, kLnEps);
    } else {
        c.out = c.a2;
    }
    return c.out;
}

Mat Mlp::backward(const MlpCache& c, const Mat& dout) {
    const int64_t n = c.x.n;
    Mat da2 = dout;
    if (use_norm && final_norm) {
        da2 = Mat(n, fc2.dout);
        kernels::layer_norm_backward(dout.v.data(), c.a2.v.data(), ln2.gamma.data(),
                                     c.ln2_mean.data(), c.ln2_invstd.data(), da2.v.data(),
                                     ln2.ggamma.data(), ln2.gbeta.data(), n, fc2.dout);
    }
    kernels::linear_backward_params(da2.v.data(), c.r1.v.data(), fc2.gw.data(), fc2.gb.data(), n,
                                    fc2.din, fc2.dout);
    Mat dr1(n, fc2.din);
    kernels::linear_backward_input(da2.v.data(), fc2.w.data(), dr1.v.data(), n, fc2.din, fc2.dout);
    Mat dpre(n, fc1.dout);
    kernels::relu_backward(dr1.v.data(), c.r1.v.data(), dpre.v.data(), n * fc1.dout);
    Mat da1 = dpre;
    if (use_norm) {
        da1 = Mat(n, fc1.dout);
        kernels::layer_norm_backward(dpre.v.data(), c.a1.v.data(), ln1.gamma.data(),
                                     c.ln1_mean.data(), c.ln1_invstd.data(), da1.v.data(),
                                     ln1.ggamma.data(), ln1.gbeta.data(), n, fc1.dout);
    }
    kernels::linear_backward_params(da1.v.data(), c.x.v.data(), fc1.gw.data(), fc1.gb.data(), n,
                                    fc1.din, fc1.dout);
    Mat dx(n, fc1.din);
    kernels::linear_backward_input(da1.v.data(), fc1.w.data(), dx.v.data(), n, fc1.din, fc1.dout);
    return dx;
}

void Mlp::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".fc1.w", &fc1.w, &fc1.gw});
    out.push_back({prefix + ".fc1.b", &fc1.b, &fc1.gb});
    out.push_back({prefix + ".fc2.w", &fc2.w, &fc2.gw});
    out.push_back({prefix + ".fc2.b", &fc2.b, &fc2.gb});
    if (use_norm) {
        out.push_back({prefix + ".ln1.gamma", &ln1.gamma, &ln1.ggamma});
        out.push_back({prefix + ".ln1.beta", &ln1.beta, &ln1.gbeta});
        if (final_norm) {
            out.push_back({prefix + ".ln2.gamma", &ln2.gamma, &ln2.ggamma});
            out.push_back({prefix + ".ln2.beta", &ln2.beta, &ln2.gbeta});
        }
    }
}

void Mlp::set_identity() {
    if (fc1.din != fc1.dout || fc2.din != fc2.dout || use_norm)
        throw ConfigError("set_identity needs square layers and norm=none");
    std::fill(fc1.w.begin(), fc1.w.end(), 0.0);
    std::fill(fc2.w.begin(), fc2.w.end(), 0.0);
    std::fill(fc1.b.begin(), fc1.b.end(), 0.0);
    std::fill(fc2.b.begin(), fc2.b.end(), 0.0);
    for (int i = 0; i < fc1.din; ++i) fc1.w[size_t(i) * fc1.din + i] = 1.0;
    for (int i = 0; i < fc2.din; ++i) fc2.w[size_t(i) * fc2.din + i] = 1.0;
}

VoxelHeads::VoxelHeads(const HeadConfig& cfg, const std::vector<int>& layer_input_dims, Rng& rng)
    : cfg_(cfg) {
    if (cfg.embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
    const bool use_norm = cfg.norm == "layer";
    if (!use_norm && cfg.norm != "none")
        throw ConfigError("head norm must be 'layer' or 'none', got '" + cfg.norm + "'");
    proj_.resize(layer_input_dims.size());
    pred_.resize(layer_input_dims.size());
    for (size_t i = 0; i < layer_input_dims.size(); ++i) {
        proj_[i].init(layer_input_dims[i], cfg.hidden_dim, cfg.embed_dim, use_norm, true, rng);
        pred_[i].init(cfg.embed_dim, cfg.hidden_dim, cfg.embed_dim, use_norm, false, rng);
    }
}

EmbeddingBatch VoxelHeads::embed(const Fmap& feature, const std::vector<int64_t>& voxel_indices,
                                 int layer_idx, int volume_id, EmbedCache& cache) const {
    if (layer_idx < 0 || layer_idx >= n_layers())
        throw ConfigError("no head constructed for feature layer " + std::to_string(layer_idx));
    const int64_t n = int64_t(voxel_indices.size());
    const int c = feature.nc;
    cache.f = Mat(n, c);
    for (int64_t i = 0; i < n; ++i) {
        const int64_t v = voxel_indices[size_t(i)];
        if (v < 0 || v >= feature.voxels())
            throw DataError("voxel index out of range for feature grid");
        std::copy_n(feature.row(v), c, cache.f.row(i));
    }
    const Mat& y = proj_[size_t(layer_idx)].forward(cache.f, cache.proj);   // z = proj(f)
    const Mat& p = pred_[size_t(layer_idx)].forward(y, cache.pred);         // p = pred(proj(f))

    EmbeddingBatch out;
    out.z = y;
    out.p = p;
    out.class_id.assign(size_t(n), 0);
    out.layer_id.assign(size_t(n), layer_idx + 1);
    out.volume_id.assign(size_t(n), volume_id);
    out.voxel_index = voxel_indices;
    return out;
}

Mat VoxelHeads::backward_embed(int layer_idx, const EmbedCache& cache, const Mat& dp,
                               const Mat* dz) {
    // p-branch gradient flows through the prediction head into proj output;
    // the z branch contributes only when stop-gradient is disabled.
    Mat dy = pred_[size_t(layer_idx)].backward(cache.pred, dp);
    if (dz) {
        for (size_t i = 0; i < dy.v.size(); ++i) dy.v[i] += dz->v[i];
    }
    return proj_[size_t(layer_idx)].backward(cache.proj, dy);
}

std::vector<ParamRef> VoxelHeads::params() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < proj_.size(); ++i) {
        proj_[i].collect_params("heads.l" + std::to_string(i) + ".proj", out);
        pred_[i].collect_params("heads.l" + std::to_string(i) + ".pred", out);
    }
    return out;
}

}  // namespace voxelsim
