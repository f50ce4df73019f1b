#include "voxelsim/unet.hpp"

#include <cmath>
#include <cstring>

#include "voxelsim/kernels.hpp"

namespace voxelsim {

namespace {
constexpr double kInEps = 1e-5;

kernels::ConvDims conv_dims(const Fmap& x, const ConvParams& p) {
    return {x.nx, x.ny, x.nz, p.cin, p.cout, p.k};
}

// Small positive bias keeps freshly initialized ReLU units alive.
constexpr double kBiasInit = 0.01;

void block_forward(const ConvBlock& blk, const Fmap& x, BlockCtx& c) {
    const Shape3 s = x.spatial();
    c.a1 = Fmap(s, blk.c1.cout);
    kernels::conv3d_forward(x.v.data(), blk.c1.w.data(), blk.c1.b.data(), c.a1.v.data(),
                            conv_dims(x, blk.c1));
    c.r1 = Fmap(s, blk.c1.cout);
    if (blk.use_norm) {
        Fmap b1(s, blk.c1.cout);
        c.m1.resize(size_t(blk.c1.cout));
        c.is1.resize(size_t(blk.c1.cout));
        kernels::instance_norm_forward(c.a1.v.data(), b1.v.data(), blk.n1.gamma.data(),
                                       blk.n1.beta.data(), c.m1.data(), c.is1.data(), c.a1.voxels(),
                                       blk.c1.cout, kInEps);
        kernels::relu_forward(b1.v.data(), c.r1.v.data(), b1.size());
    } else {
        kernels::relu_forward(c.a1.v.data(), c.r1.v.data(), c.a1.size());
    }
    c.a2 = Fmap(s, blk.c2.cout);
    kernels::conv3d_forward(c.r1.v.data(), blk.c2.w.data(), blk.c2.b.data(), c.a2.v.data(),
                            conv_dims(c.r1, blk.c2));
    c.r2 = Fmap(s, blk.c2.cout);
    if (blk.use_norm) {
        Fmap b2(s, blk.c2.cout);
        c.m2.resize(size_t(blk.c2.cout));
        c.is2.resize(size_t(blk.c2.cout));
        kernels::instance_norm_forward(c.a2.v.data(), b2.v.data(), blk.n2.gamma.data(),
                                       blk.n2.beta.data(), c.m2.data(), c.is2.data(), c.a2.voxels(),
                                       blk.c2.cout, kInEps);
        kernels::relu_forward(b2.v.data(), c.r2.v.data(), b2.size());
    } else {
        kernels::relu_forward(c.a2.v.data(), c.r2.v.data(), c.a2.size());
    }
}

Fmap block_backward(ConvBlock& blk, const BlockCtx& c, const Fmap& x, const Fmap& dy) {
    const Shape3 s = x.spatial();
    Fmap db2(s, blk.c2.cout);
    kernels::relu_backward(dy.v.data(), c.r2.v.data(), db2.v.data(), dy.size());
    Fmap da2 = std::move(db2);
    if (blk.use_norm) {
        Fmap tmp(s, blk.c2.cout);
        kernels::instance_norm_backward(da2.v.data(), c.a2.v.data(), blk.n2.gamma.data(),
                                        c.m2.data(), c.is2.data(), tmp.v.data(),
                                        blk.n2.ggamma.data(), blk.n2.gbeta.data(), c.a2.voxels(),
                                        blk.c2.cout);
        da2 = std::move(tmp);
    }
    kernels::conv3d_backward_params(da2.v.data(), c.r1.v.data(), blk.c2.gw.data(),
                                    blk.c2.gb.data(), conv_dims(c.r1, blk.c2));
    Fmap dr1(s, blk.c2.cin);
    kernels::conv3d_backward_input(da2.v.data(), blk.c2.w.data(), dr1.v.data(),
                                   conv_dims(c.r1, blk.c2));
    Fmap db1(s, blk.c1.cout);
    kernels::relu_backward(dr1.v.data(), c.r1.v.data(), db1.v.data(), dr1.size());
    Fmap da1 = std::move(db1);
    if (blk.use_norm) {
        Fmap tmp(s, blk.c1.cout);
        kernels::instance_norm_backward(da1.v.data(), c.a1.v.data(), blk.n1.gamma.data(),
                                        c.m1.data(), c.is1.data(), tmp.v.data(),
                                        blk.n1.ggamma.data(), blk.n1.gbeta.data(), c.a1.voxels(),
                                        blk.c1.cout);
        da1 = std::move(tmp);
    }
    kernels::conv3d_backward_params(da1.v.data(), x.v.data(), blk.c1.gw.data(), blk.c1.gb.data(),
                                    conv_dims(x, blk.c1));
    Fmap dx(s, blk.c1.cin);
    kernels::conv3d_backward_input(da1.v.data(), blk.c1.w.data(), dx.v.data(),
                                   conv_dims(x, blk.c1));
    return dx;
}

void add_into(Fmap& dst, const Fmap& src) {
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace

void UNetConfig::validate() const {
    if (depth < 2) throw ConfigError("unet depth must be >= 2");
    if (base_channels < 4) throw ConfigError("unet base_channels must be >= 4");
    if (n_classes < 2) throw ConfigError("unet n_classes must be >= 2");
    if (in_channels < 1) throw ConfigError("unet in_channels must be >= 1");
    if (norm != "instance" && norm != "none")
        throw ConfigError("unet norm must be 'instance' or 'none', got '" + norm + "'");
    if (upsample != "tconv" && upsample != "trilinear")
        throw ConfigError("unet upsample must be 'tconv' or 'trilinear', got '" + upsample + "'");
}

void ConvParams::init(int cin_, int cout_, int k_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    k = k_;
    w.resize(size_t(cout) * k * k * k * cin);
    b.assign(size_t(cout), kBiasInit);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
    const double s = std::sqrt(2.0 / (double(cin) * k * k * k));
    for (auto& x : w) x = rng.normal(0.0, s);
}

void InstParams::init(int c_) {
    c = c_;
    gamma.assign(size_t(c), 1.0);
    beta.assign(size_t(c), 0.0);
    ggamma.assign(size_t(c), 0.0);
    gbeta.assign(size_t(c), 0.0);
}

void ConvBlock::init(int cin, int cout, bool use_norm_, Rng& rng) {
    use_norm = use_norm_;
    c1.init(cin, cout, 3, rng);
    c2.init(cout, cout, 3, rng);
    n1.init(cout);
    n2.init(cout);
}

void ConvBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".conv1.w", &c1.w, &c1.gw});
    out.push_back({prefix + ".conv1.b", &c1.b, &c1.gb});
    out.push_back({prefix + ".conv2.w", &c2.w, &c2.gw});
    out.push_back({prefix + ".conv2.b", &c2.b, &c2.gb});
    if (use_norm) {
        out.push_back({prefix + ".norm1.gamma", &n1.gamma, &n1.ggamma});
        out.push_back({prefix + ".norm1.beta", &n1.beta, &n1.gbeta});
        out.push_back({prefix + ".norm2.gamma", &n2.gamma, &n2.ggamma});
        out.push_back({prefix + ".norm2.beta", &n2.beta, &n2.gbeta});
    }
}

void Upsampler::init(int cin, int cout, bool trilinear_, Rng& rng) {
    trilinear = trilinear_;
    if (trilinear) {
        conv.init(cin, cout, 1, rng);
    } else {
        // tconv weight layout w[tap][oc][ic]; He with fan_in = cin (one tap
        // contributes per output voxel).
        conv.cin = cin;
        conv.cout = cout;
        conv.k = 2;
        conv.w.resize(size_t(8) * cout * cin);
        conv.b.assign(size_t(cout), kBiasInit);
        conv.gw.assign(conv.w.size(), 0.0);
        conv.gb.assign(conv.b.size(), 0.0);
        const double s = std::sqrt(2.0 / double(cin));
        for (auto& x : conv.w) x = rng.normal(0.0, s);
    }
}

void Upsampler::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".up.w", &conv.w, &conv.gw});
    out.push_back({prefix + ".up.b", &conv.b, &conv.gb});
}

UNet3D::UNet3D(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto ch = cfg_.channels();
    const bool norm = cfg_.norm == "instance";
    enc_.resize(size_t(cfg_.depth));
    for (int l = 0; l < cfg_.depth; ++l)
        enc_[size_t(l)].init(l == 0 ? cfg_.in_channels : ch[size_t(l - 1)], ch[size_t(l)], norm,
                             rng);
    ups_.resize(size_t(cfg_.depth - 1));
    dec_.resize(size_t(cfg_.depth - 1));
    for (int l = 0; l < cfg_.depth - 1; ++l) {
        ups_[size_t(l)].init(ch[size_t(l + 1)], ch[size_t(l)], cfg_.upsample == "trilinear", rng);
        dec_[size_t(l)].init(2 * ch[size_t(l)], ch[size_t(l)], norm, rng);
    }
    out_conv_.init(ch[0], cfg_.n_classes, 1, rng);
}

std::vector<int> UNet3D::feature_layer_dims(int n_feature_layers) const {
    if (n_feature_layers < 1 || n_feature_layers > cfg_.depth)
        throw ConfigError("n_feature_layers must be in [1, depth]");
    const auto ch = cfg_.channels();
    std::vector<int> dims;
    for (int i = 0; i < n_feature_layers; ++i) dims.push_back(ch[size_t(cfg_.depth - 1 - i)]);
    return dims;
}

FeaturePyramid UNet3D::forward(const Volume<double>& image, int n_feature_layers,
                               UNetContext& ctx) const {
    const Shape3 s = image.shape;
    const int div = 1 << (cfg_.depth - 1);
    if (s.nx % div || s.ny % div || s.nz % div)
        throw DataError("input shape " + s.str() + " not divisible by " + std::to_string(div));
    if (n_feature_layers > cfg_.depth)
        throw ConfigError("n_feature_layers exceeds encoder depth");

    ctx.input = Fmap(s, cfg_.in_channels);
    // single-channel copy into channel-fastest layout
    std::copy(image.data.begin(), image.data.end(), ctx.input.v.begin());

    ctx.enc.resize(size_t(cfg_.depth));
    ctx.pooled.resize(size_t(cfg_.depth - 1));
    ctx.pool_argmax.resize(size_t(cfg_.depth - 1));
    const Fmap* cur = &ctx.input;
    for (int l = 0; l < cfg_.depth; ++l) {
        block_forward(enc_[size_t(l)], *cur, ctx.enc[size_t(l)]);
        if (l < cfg_.depth - 1) {
            const Fmap& e = ctx.enc[size_t(l)].r2;
            Fmap& pooled = ctx.pooled[size_t(l)];
            pooled = Fmap(e.nx / 2, e.ny / 2, e.nz / 2, e.nc);
            ctx.pool_argmax[size_t(l)].resize(size_t(pooled.size()));
            kernels::maxpool2x_forward(e.v.data(), pooled.v.data(),
                                       ctx.pool_argmax[size_t(l)].data(), e.nx, e.ny, e.nz, e.nc);
            cur = &pooled;
        }
    }

    ctx.ups.resize(size_t(cfg_.depth - 1));
    ctx.cat.resize(size_t(cfg_.depth - 1));
    ctx.dec.resize(size_t(cfg_.depth - 1));
    const Fmap* deep = &ctx.enc[size_t(cfg_.depth - 1)].r2;
    for (int l = cfg_.depth - 2; l >= 0; --l) {
        const Upsampler& up = ups_[size_t(l)];
        const Fmap& skip = ctx.enc[size_t(l)].r2;
        Fmap up_out(skip.spatial(), up.conv.cout);
        if (up.trilinear) {
            ctx.ups[size_t(l)].up = Fmap(skip.spatial(), deep->nc);
            kernels::upsample2x_forward(deep->v.data(), ctx.ups[size_t(l)].up.v.data(), deep->nx,
                                        deep->ny, deep->nz, deep->nc);
            kernels::conv3d_forward(ctx.ups[size_t(l)].up.v.data(), up.conv.w.data(),
                                    up.conv.b.data(), up_out.v.data(),
                                    conv_dims(ctx.ups[size_t(l)].up, up.conv));
        } else {
            kernels::tconv2x_forward(deep->v.data(), up.conv.w.data(), up.conv.b.data(),
                                     up_out.v.data(),
                                     {deep->nx, deep->ny, deep->nz, up.conv.cin, up.conv.cout});
        }
        // concat channels [up | skip]
        Fmap& cat = ctx.cat[size_t(l)];
        cat = Fmap(skip.spatial(), up_out.nc + skip.nc);
        const int64_t nvox = cat.voxels();
        for (int64_t v = 0; v < nvox; ++v) {
            std::memcpy(cat.row(v), up_out.row(v), size_t(up_out.nc) * sizeof(double));
            std::memcpy(cat.row(v) + up_out.nc, skip.row(v), size_t(skip.nc) * sizeof(double));
        }
        block_forward(dec_[size_t(l)], cat, ctx.dec[size_t(l)]);
        deep = &ctx.dec[size_t(l)].r2;
    }

    ctx.score = Fmap(s, cfg_.n_classes);
    kernels::conv3d_forward(deep->v.data(), out_conv_.w.data(), out_conv_.b.data(),
                            ctx.score.v.data(), conv_dims(*deep, out_conv_));

    FeaturePyramid pyr;
    pyr.score = &ctx.score;
    for (int i = 0; i < n_feature_layers; ++i)
        pyr.features.push_back(&ctx.enc[size_t(cfg_.depth - 1 - i)].r2);
    return pyr;
}

void UNet3D::backward(UNetContext& ctx, const Fmap& dscore,
                      const std::vector<std::pair<int, Fmap>>& feature_grads) {
    const int depth = cfg_.depth;
    const Fmap& dec0_out = depth >= 2 ? ctx.dec[0].r2 : ctx.enc[0].r2;
    kernels::conv3d_backward_params(dscore.v.data(), dec0_out.v.data(), out_conv_.gw.data(),
                                    out_conv_.gb.data(), conv_dims(dec0_out, out_conv_));
    Fmap dcur(dec0_out.spatial(), out_conv_.cin);
    kernels::conv3d_backward_input(dscore.v.data(), out_conv_.w.data(), dcur.v.data(),
                                   conv_dims(dec0_out, out_conv_));

    // dEnc[l]: gradient accumulating at the encoder block outputs.
    std::vector<Fmap> dEnc(static_cast<size_t>(depth));
    for (int l = 0; l < depth; ++l) {
        const Fmap& e = ctx.enc[size_t(l)].r2;
        dEnc[size_t(l)] = Fmap(e.spatial(), e.nc, 0.0);
    }

    // Decoder, shallow to deep; each step converts d(dec_out[l]) into the
    // skip contribution at level l and d(deeper stage).
    for (int l = 0; l < depth - 1; ++l) {
        const Fmap& deep =
            (l == depth - 2) ? ctx.enc[size_t(depth - 1)].r2 : ctx.dec[size_t(l + 1)].r2;
        Fmap dcat = block_backward(dec_[size_t(l)], ctx.dec[size_t(l)], ctx.cat[size_t(l)], dcur);
        const Upsampler& up = ups_[size_t(l)];
        const int cup = up.conv.cout;
        const Fmap& skip = ctx.enc[size_t(l)].r2;
        Fmap dup(skip.spatial(), cup);
        const int64_t nvox = dcat.voxels();
        for (int64_t v = 0; v < nvox; ++v) {
            std::memcpy(dup.row(v), dcat.row(v), size_t(cup) * sizeof(double));
            double* dst = dEnc[size_t(l)].row(v);
            const double* src = dcat.row(v) + cup;
            for (int ch = 0; ch < skip.nc; ++ch) dst[ch] += src[ch];
        }
        Fmap ddeep(deep.spatial(), deep.nc);
        if (up.trilinear) {
            const Fmap& pre = ctx.ups[size_t(l)].up;
            kernels::conv3d_backward_params(dup.v.data(), pre.v.data(), ups_[size_t(l)].conv.gw.data(),
                                            ups_[size_t(l)].conv.gb.data(),
                                            conv_dims(pre, up.conv));
            Fmap dpre(pre.spatial(), pre.nc);
            kernels::conv3d_backward_input(dup.v.data(), up.conv.w.data(), dpre.v.data(),
                                           conv_dims(pre, up.conv));
            kernels::upsample2x_backward(dpre.v.data(), ddeep.v.data(), deep.nx, deep.ny, deep.nz,
                                         deep.nc);
        } else {
            const kernels::TconvDims td{deep.nx, deep.ny, deep.nz, up.conv.cin, up.conv.cout};
            kernels::tconv2x_backward_params(dup.v.data(), deep.v.data(),
                                             ups_[size_t(l)].conv.gw.data(),
                                             ups_[size_t(l)].conv.gb.data(), td);
            kernels::tconv2x_backward_input(dup.v.data(), up.conv.w.data(), ddeep.v.data(), td);
        }
        if (l == depth - 2) {
            add_into(dEnc[size_t(depth - 1)], ddeep);
        } else {
            dcur = std::move(ddeep);
        }
    }

    // Extra gradients from the voxel-level feature layers.
    for (const auto& [fidx, g] : feature_grads) {
        const int level = depth - 1 - fidx;
        if (level < 0) throw ConfigError("feature grad index out of range");
        add_into(dEnc[size_t(level)], g);
    }

    // Encoder, deep to shallow.
    for (int l = depth - 1; l >= 0; --l) {
        const Fmap& x = l == 0 ? ctx.input : ctx.pooled[size_t(l - 1)];
        Fmap dx = block_backward(enc_[size_t(l)], ctx.enc[size_t(l)], x, dEnc[size_t(l)]);
        if (l > 0) {
            const Fmap& e = ctx.enc[size_t(l - 1)].r2;
            Fmap dpool(e.spatial(), e.nc);
            kernels::maxpool2x_backward(dx.v.data(), ctx.pool_argmax[size_t(l - 1)].data(),
                                        dpool.v.data(), e.nx, e.ny, e.nz, e.nc);
            add_into(dEnc[size_t(l - 1)], dpool);
        }
    }
}

std::vector<ParamRef> UNet3D::params() {
    std::vector<ParamRef> out;
    for (size_t l = 0; l < enc_.size(); ++l)
        enc_[l].collect_params("unet.enc" + std::to_string(l), out);
    for (size_t l = 0; l < dec_.size(); ++l) {
        ups_[l].collect_params("unet.dec" + std::to_string(l), out);
        dec_[l].collect_params("unet.dec" + std::to_string(l), out);
    }
    out.push_back({"unet.out.w", &out_conv_.w, &out_conv_.gw});
    out.push_back({"unet.out.b", &out_conv_.b, &out_conv_.gb});
    return out;
}

int64_t UNet3D::count_parameters() const {
    int64_t n = 0;
    auto& self = const_cast<UNet3D&>(*this);
    for (const auto& p : self.params()) n += int64_t(p.value->size());
    return n;
}

}  // namespace voxelsim
