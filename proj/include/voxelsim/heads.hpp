#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelsim/rng.hpp"
#include "voxelsim/volume.hpp"

namespace voxelsim {

/// Projection/prediction MLP sizing. One (proj, pred) pair is built per
/// feature layer because encoder channel counts differ; all layers project to
/// the same embed_dim so cross-layer pairs are comparable.
struct HeadConfig {
    int embed_dim = 64;
    int hidden_dim = 64;
    std::string norm = "layer";  // "layer" | "none"
};

struct ParamRef {
    std::string name;
    std::vector<double>* value;
    std::vector<double>* grad;
};

/// Sampled per-voxel embeddings, row-paired: row i holds p and z of the same
/// voxel. z is gradient-blocked unless z_requires_grad is set (test harness
/// only); feature_loss honors the flag.
struct EmbeddingBatch {
    Mat p;
    Mat z;
    std::vector<int> class_id;
    std::vector<int> layer_id;  // 1-based F_i index (1 = bottleneck)
    std::vector<int> volume_id;
    std::vector<int64_t> voxel_index;  // flat index on the layer's grid
    bool z_requires_grad = false;

    int64_t size() const { return p.n; }
    void append(const EmbeddingBatch& other);
};

/// Value-identity copy of z; the gradient-blocking itself is structural (the
/// loss only emits dZ when z_requires_grad is set).
Mat stop_gradient(const Mat& z);

// ---------------------------------------------------------------------------
// MLP heads
// ---------------------------------------------------------------------------

struct LinearParams {
    int din = 0, dout = 0;
    std::vector<double> w, b, gw, gb;
    void init(int din_, int dout_, Rng& rng);
};

struct NormParams {
    int dim = 0;
    std::vector<double> gamma, beta, ggamma, gbeta;
    void init(int dim_);
};

struct MlpCache {
    Mat x, a1, n1, r1, a2, out;
    std::vector<double> ln1_mean, ln1_invstd, ln2_mean, ln2_invstd;
};

/// fc -> [norm] -> relu -> fc [-> norm]. The projection head keeps the final
/// norm, the prediction head does not.
struct Mlp {
    LinearParams fc1, fc2;
    NormParams ln1, ln2;
    bool use_norm = true;
    bool final_norm = true;

    void init(int din, int hidden, int dout, bool use_norm_, bool final_norm_, Rng& rng);
    const Mat& forward(const Mat& x, MlpCache& c) const;
    /// Accumulates parameter grads; returns d/dx.
    Mat backward(const MlpCache& c, const Mat& dout);
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
    /// Test harness: square identity weights (requires matching dims and
    /// norm disabled).
    void set_identity();
};

struct EmbedCache {
    Mat f;  // gathered voxel features, N x C_i
    MlpCache proj, pred;
};

/// Per-resolution Siamese heads. Training-only: checkpoints mark them
/// separately so inference loading can skip them.
class VoxelHeads {
public:
    VoxelHeads() = default;
    /// layer_input_dims[i] = C_i of feature layer i (0 = bottleneck F_1).
    VoxelHeads(const HeadConfig& cfg, const std::vector<int>& layer_input_dims, Rng& rng);

    int n_layers() const { return int(proj_.size()); }
    const HeadConfig& config() const { return cfg_; }

    /// Gather voxel rows of F and run z = proj(f), p = pred(proj(f)).
    /// layer ids are 0-based here; EmbeddingBatch records them 1-based.
    EmbeddingBatch embed(const Fmap& feature, const std::vector<int64_t>& voxel_indices,
                         int layer_idx, int volume_id, EmbedCache& cache) const;

    /// Backprop dP (and dZ when present, i.e. stop-gradient disabled) through
    /// the heads; returns gradient w.r.t. the gathered features (N x C_i).
    Mat backward_embed(int layer_idx, const EmbedCache& cache, const Mat& dp, const Mat* dz);

    Mlp& proj(int layer_idx) { return proj_[size_t(layer_idx)]; }
    Mlp& pred(int layer_idx) { return pred_[size_t(layer_idx)]; }
    std::vector<ParamRef> params();

private:
    HeadConfig cfg_;
    std::vector<Mlp> proj_, pred_;
};

}  // namespace voxelsim
