#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "voxelsim/heads.hpp"
#include "voxelsim/volume.hpp"

namespace voxelsim {

/// -(p/|p|) . (z/|z|), in [-1, 1]. Throws NumericError on a zero-norm input.
double neg_cosine(std::span<const double> p, std::span<const double> z);

// ---------------------------------------------------------------------------
// Soft Dice
// ---------------------------------------------------------------------------

inline constexpr double kDiceEps = 1e-6;

struct DiceResult {
    double loss = 0.0;                  // 1 - mean per-class dice
    std::vector<double> per_class;      // dice_c
};

/// Multi-label soft Dice on class probabilities (softmax already applied):
/// dice_c = 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps), loss = 1 - mean_c dice_c.
/// The smoothing epsilon guards empty classes; it is kept small enough that
/// exact-overlap cases stay within 1e-6 of the ideal values.
DiceResult soft_dice_loss(const Fmap& probs, const Volume<uint8_t>& label,
                          double eps = kDiceEps);

/// d(loss)/d(probs), scaled by `scale`, accumulated into dprobs.
void soft_dice_backward(const Fmap& probs, const Volume<uint8_t>& label, double scale,
                        Fmap& dprobs, double eps = kDiceEps);

/// Fused softmax + Dice on raw scores; when dscores != nullptr it receives
/// scale * d(loss)/d(scores) (accumulated).
DiceResult dice_loss_on_scores(const Fmap& scores, const Volume<uint8_t>& label,
                               Fmap* dscores = nullptr, double scale = 1.0,
                               double eps = kDiceEps);

// ---------------------------------------------------------------------------
// Voxel-pair similarity and the feature loss
// ---------------------------------------------------------------------------

/// Mean cosine similarity over all (p, z) cross pairs, factorized as
/// (sum p_hat) . (sum z_hat) / n_pairs. With exclude_same_index (requires
/// |P| == |Z|), row-paired entries - the p and z of one voxel - are left out.
/// Throws NumericError on an empty pair set or zero-norm member.
double pair_similarity(const Mat& P, const Mat& Z, bool exclude_same_index);

/// w_c = (1/|P^c|) / sum_k (1/|P^k|); equals (|P|/|P^c|) normalized. Sums to 1.
std::vector<double> class_weights(const std::vector<int64_t>& counts);

struct FeatureLossOptions {
    bool weighted = true;        // class weights from sampled counts; else 1/C
    bool pooled_layers = true;   // pool embeddings across layers (default)
    std::vector<double> layer_weights;  // w_f, indexed by layer_id-1; empty = 1
};

struct FeatureLossResult {
    double value = 0.0;
    std::vector<int> classes;                 // class ids included
    std::vector<double> per_class_similarity; // S_c per included class
    std::vector<double> weights;              // w_c per included class
    bool empty = false;  // no class had >= 2 sampled voxels
};

/// L_feature = -sum_c w_c * S_c where S_c is the mean same-class cross-voxel
/// cosine similarity between the p branch and the gradient-blocked z branch.
/// Pooled mode computes S_c over the cross-layer pooled sets; per-layer mode
/// sums w_f-weighted per-layer similarities instead. When dP/dZ are given
/// they accumulate coeff * d(value)/d(embedding); dZ stays untouched unless
/// batch.z_requires_grad is set.
FeatureLossResult feature_loss(const EmbeddingBatch& batch, const FeatureLossOptions& opt = {},
                               Mat* dP = nullptr, Mat* dZ = nullptr, double coeff = 1.0);

/// L = L_dice + lambda * L_feature.
double total_loss(double dice, double feature, double lambda);

/// Per-step objective summary, serialized to the JSONL training log.
struct LossReport {
    double dice_loss = 0.0;
    double feature_loss = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    std::vector<double> per_class_dice;
    std::vector<int> feature_classes;
    std::vector<double> per_class_similarity;
    std::vector<double> w_c;
    int64_t sampled_voxels = 0;
};

}  // namespace voxelsim
