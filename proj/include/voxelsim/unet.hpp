#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voxelsim/heads.hpp"
#include "voxelsim/rng.hpp"
#include "voxelsim/volume.hpp"

namespace voxelsim {

struct UNetConfig {
    int depth = 4;           // resolution levels
    int base_channels = 16;  // channels at full resolution, doubling per level
    int n_classes = 2;
    int in_channels = 1;
    std::string norm = "instance";   // "instance" | "none"
    std::string upsample = "tconv";  // "tconv" | "trilinear"

    std::vector<int> channels() const {
        std::vector<int> c(static_cast<size_t>(depth));
        for (int l = 0; l < depth; ++l) c[size_t(l)] = base_channels << l;
        return c;
    }
    void validate() const;
};

/// Encoder features F_1..F_|F| ordered from the bottleneck outward, plus the
/// full-resolution class score map. Pointers reference a UNetContext and stay
/// valid while it lives.
struct FeaturePyramid {
    std::vector<const Fmap*> features;
    const Fmap* score = nullptr;
};

// ---------------------------------------------------------------------------
// Layer parameter blocks
// ---------------------------------------------------------------------------

struct ConvParams {
    int cin = 0, cout = 0, k = 3;
    std::vector<double> w, b, gw, gb;
    void init(int cin_, int cout_, int k_, Rng& rng);
    int64_t count() const { return int64_t(w.size() + b.size()); }
};

struct InstParams {
    int c = 0;
    std::vector<double> gamma, beta, ggamma, gbeta;
    void init(int c_);
};

/// [conv3 -> norm -> relu] x2
struct ConvBlock {
    ConvParams c1, c2;
    InstParams n1, n2;
    bool use_norm = true;
    void init(int cin, int cout, bool use_norm_, Rng& rng);
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

struct BlockCtx {
    Fmap a1, r1, a2, r2;  // post-conv1, post-relu1, post-conv2, block output
    std::vector<double> m1, is1, m2, is2;
};

/// Either a 2x2x2 stride-2 transposed conv or trilinear x2 + 1x1x1 conv.
struct Upsampler {
    bool trilinear = false;
    ConvParams conv;  // tconv layout w[tap][oc][ic], or 1x1x1 conv
    void init(int cin, int cout, bool trilinear_, Rng& rng);
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

struct UpCtx {
    Fmap up;  // trilinear mode: pre-conv upsampled map
};

struct UNetContext {
    Fmap input;
    std::vector<BlockCtx> enc;
    std::vector<Fmap> pooled;
    std::vector<std::vector<int64_t>> pool_argmax;
    std::vector<UpCtx> ups;
    std::vector<Fmap> cat;
    std::vector<BlockCtx> dec;
    Fmap score;
};

// ---------------------------------------------------------------------------

class UNet3D {
public:
    UNet3D() = default;
    UNet3D(const UNetConfig& cfg, Rng& rng);

    /// Runs the network; input spatial extents must be divisible by
    /// 2^(depth-1). Returns the score map plus the n_feature_layers deepest
    /// encoder outputs (F_1 = bottleneck). Deterministic given parameters.
    FeaturePyramid forward(const Volume<double>& image, int n_feature_layers,
                           UNetContext& ctx) const;

    /// Backprop from the score map. feature_grads carries extra gradients
    /// injected at encoder outputs, keyed by 0-based feature-layer index
    /// (0 = bottleneck); shapes must match the corresponding F_i. Parameter
    /// grads accumulate.
    void backward(UNetContext& ctx, const Fmap& dscore,
                  const std::vector<std::pair<int, Fmap>>& feature_grads = {});

    std::vector<ParamRef> params();
    int64_t count_parameters() const;
    const UNetConfig& config() const { return cfg_; }
    /// Channel count C_i per feature layer (index 0 = bottleneck).
    std::vector<int> feature_layer_dims(int n_feature_layers) const;

private:
    UNetConfig cfg_;
    std::vector<ConvBlock> enc_;
    std::vector<ConvBlock> dec_;
    std::vector<Upsampler> ups_;
    ConvParams out_conv_;
};

}  // namespace voxelsim
