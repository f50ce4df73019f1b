#include "voxelsim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "voxelsim/kernels.hpp"

namespace voxelsim {
namespace {

double norm2(const double* x, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += x[i] * x[i];
    return std::sqrt(s);
}

}  // namespace

double neg_cosine(std::span<const double> p, std::span<const double> z) {
    if (p.size() != z.size() || p.empty()) throw NumericError("neg_cosine: dimension mismatch");
    const int d = int(p.size());
    const double np = norm2(p.data(), d), nz = norm2(z.data(), d);
    if (np == 0.0 || nz == 0.0) throw NumericError("neg_cosine: zero-norm input");
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += p[i] * z[i];
    return -dot / (np * nz);
}

// ---------------------------------------------------------------------------
// Soft Dice
// ---------------------------------------------------------------------------

DiceResult soft_dice_loss(const Fmap& probs, const Volume<uint8_t>& label, double eps) {
    const int c = probs.nc;
    const int64_t nvox = probs.voxels();
    if (!(probs.spatial() == label.shape))
        throw DataError("dice: probs and label shapes differ");
    DiceResult res;
    res.per_class.assign(size_t(c), 0.0);
#pragma omp parallel for schedule(static)
    for (int cls = 0; cls < c; ++cls) {
        double num = 0.0, sp2 = 0.0, sg2 = 0.0;
        for (int64_t v = 0; v < nvox; ++v) {
            const double pv = probs.v[size_t(v) * c + cls];
            const double gv = label[v] == cls ? 1.0 : 0.0;
            num += pv * gv;
            sp2 += pv * pv;
            sg2 += gv;  // g^2 == g for one-hot
        }
        res.per_class[size_t(cls)] = 2.0 * num / (sp2 + sg2 + eps);
    }
    double mean = 0.0;
    for (double d : res.per_class) mean += d;
    res.loss = 1.0 - mean / c;
    return res;
}

void soft_dice_backward(const Fmap& probs, const Volume<uint8_t>& label, double scale,
                        Fmap& dprobs, double eps) {
    const int c = probs.nc;
    const int64_t nvox = probs.voxels();
#pragma omp parallel for schedule(static)
    for (int cls = 0; cls < c; ++cls) {
        double num = 0.0, sp2 = 0.0, sg2 = 0.0;
        for (int64_t v = 0; v < nvox; ++v) {
            const double pv = probs.v[size_t(v) * c + cls];
            const double gv = label[v] == cls ? 1.0 : 0.0;
            num += pv * gv;
            sp2 += pv * pv;
            sg2 += gv;
        }
        const double den = sp2 + sg2 + eps;
        // loss = 1 - (1/C) sum_c (2*num_c / den_c)
        // d loss / d p_v^c = -(1/C) * (2*g - (2*num/den)*2*p) / den
        const double k = -scale / double(c);
        const double ratio = 2.0 * num / den;
        for (int64_t v = 0; v < nvox; ++v) {
            const double pv = probs.v[size_t(v) * c + cls];
            const double gv = label[v] == cls ? 1.0 : 0.0;
            dprobs.v[size_t(v) * c + cls] += k * (2.0 * gv - ratio * 2.0 * pv) / den;
        }
    }
}

DiceResult dice_loss_on_scores(const Fmap& scores, const Volume<uint8_t>& label, Fmap* dscores,
                               double scale, double eps) {
    Fmap probs(scores.nx, scores.ny, scores.nz, scores.nc);
    kernels::softmax_channels(scores.v.data(), probs.v.data(), scores.voxels(), scores.nc);
    DiceResult res = soft_dice_loss(probs, label, eps);
    if (dscores) {
        Fmap dprobs(scores.nx, scores.ny, scores.nz, scores.nc, 0.0);
        soft_dice_backward(probs, label, scale, dprobs, eps);
        const int c = scores.nc;
        const int64_t nvox = scores.voxels();
#pragma omp parallel for schedule(static)
        for (int64_t v = 0; v < nvox; ++v) {
            const double* pr = probs.row(v);
            const double* dp = dprobs.row(v);
            double inner = 0.0;
            for (int i = 0; i < c; ++i) inner += dp[i] * pr[i];
            double* ds = dscores->row(v);
            for (int i = 0; i < c; ++i) ds[i] += pr[i] * (dp[i] - inner);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Pair similarity
// ---------------------------------------------------------------------------

double pair_similarity(const Mat& P, const Mat& Z, bool exclude_same_index) {
    if (P.n == 0 || Z.n == 0) throw NumericError("pair_similarity: empty set");
    if (P.d != Z.d) throw NumericError("pair_similarity: dimension mismatch");
    if (exclude_same_index && P.n != Z.n)
        throw NumericError("pair_similarity: row pairing needs equal sizes");
    const int d = P.d;
    std::vector<double> sp(size_t(d), 0.0), sz(size_t(d), 0.0);
    double self = 0.0;
    for (int64_t i = 0; i < P.n; ++i) {
        const double n = norm2(P.row(i), d);
        if (n == 0.0) throw NumericError("pair_similarity: zero-norm member");
        for (int j = 0; j < d; ++j) sp[size_t(j)] += P.row(i)[j] / n;
    }
    for (int64_t i = 0; i < Z.n; ++i) {
        const double n = norm2(Z.row(i), d);
        if (n == 0.0) throw NumericError("pair_similarity: zero-norm member");
        for (int j = 0; j < d; ++j) sz[size_t(j)] += Z.row(i)[j] / n;
    }
    double total = 0.0;
    for (int j = 0; j < d; ++j) total += sp[size_t(j)] * sz[size_t(j)];
    int64_t n_pairs = P.n * Z.n;
    if (exclude_same_index) {
        for (int64_t i = 0; i < P.n; ++i) {
            const double np = norm2(P.row(i), d), nz = norm2(Z.row(i), d);
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += P.row(i)[j] * Z.row(i)[j];
            self += dot / (np * nz);
        }
        total -= self;
        n_pairs -= P.n;
    }
    if (n_pairs <= 0) throw NumericError("pair_similarity: no pairs after self-exclusion");
    return total / double(n_pairs);
}

std::vector<double> class_weights(const std::vector<int64_t>& counts) {
    std::vector<double> w(counts.size(), 0.0);
    double denom = 0.0;
    for (size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] <= 0) throw NumericError("class_weights: zero count");
        w[i] = 1.0 / double(counts[i]);
        denom += w[i];
    }
    for (double& x : w) x /= denom;
    return w;
}

// ---------------------------------------------------------------------------
// Feature loss
// ---------------------------------------------------------------------------

namespace {

struct ClassGroup {
    int cls = 0;
    std::vector<int64_t> rows;
};

// Similarity over one row subset with self-pairs excluded, plus the gradient
// w.r.t. the raw (unnormalized) embeddings:
//   S = [ (sum p_hat).(sum z_hat) - sum_i p_hat_i.z_hat_i ] / (m^2 - m)
//   dS/dp_i = J_i^T (SZ - z_hat_i) / (m^2 - m),  J_i = (I - p_hat p_hat^T)/|p|
struct SubsetSim {
    double value = 0.0;
    // cached per-row unit vectors and norms for the gradient pass
    std::vector<double> p_hat, z_hat, p_norm, z_norm;
    std::vector<double> sp, sz;
    int64_t m = 0;
    int d = 0;
};

SubsetSim subset_similarity(const EmbeddingBatch& b, const std::vector<int64_t>& rows) {
    SubsetSim s;
    s.m = int64_t(rows.size());
    s.d = b.p.d;
    const int d = s.d;
    s.p_hat.resize(size_t(s.m) * d);
    s.z_hat.resize(size_t(s.m) * d);
    s.p_norm.resize(size_t(s.m));
    s.z_norm.resize(size_t(s.m));
    s.sp.assign(size_t(d), 0.0);
    s.sz.assign(size_t(d), 0.0);
    double self = 0.0;
    for (int64_t i = 0; i < s.m; ++i) {
        const double* pr = b.p.row(rows[size_t(i)]);
        const double* zr = b.z.row(rows[size_t(i)]);
        const double np = norm2(pr, d), nz = norm2(zr, d);
        if (np == 0.0 || nz == 0.0) throw NumericError("feature_loss: zero-norm embedding");
        s.p_norm[size_t(i)] = np;
        s.z_norm[size_t(i)] = nz;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) {
            const double ph = pr[j] / np, zh = zr[j] / nz;
            s.p_hat[size_t(i) * d + j] = ph;
            s.z_hat[size_t(i) * d + j] = zh;
            s.sp[size_t(j)] += ph;
            s.sz[size_t(j)] += zh;
            dot += ph * zh;
        }
        self += dot;
    }
    double total = 0.0;
    for (int j = 0; j < d; ++j) total += s.sp[size_t(j)] * s.sz[size_t(j)];
    s.value = (total - self) / double(s.m * s.m - s.m);
    return s;
}

// Accumulate coeff * dS/d(raw embeddings) into dP (and dZ when given).
void subset_similarity_grad(const EmbeddingBatch& b, const std::vector<int64_t>& rows,
                            const SubsetSim& s, double coeff, Mat* dP, Mat* dZ) {
    const int d = s.d;
    const double inv_pairs = 1.0 / double(s.m * s.m - s.m);
    for (int64_t i = 0; i < s.m; ++i) {
        const int64_t r = rows[size_t(i)];
        if (dP) {
            // v = (SZ - z_hat_i) / n_pairs, then project out the radial part.
            double vdotp = 0.0;
            const double* ph = s.p_hat.data() + size_t(i) * d;
            const double* zh = s.z_hat.data() + size_t(i) * d;
            for (int j = 0; j < d; ++j) {
                const double vj = (s.sz[size_t(j)] - zh[j]) * inv_pairs;
                vdotp += vj * ph[j];
            }
            double* out = dP->row(r);
            const double inv_norm = 1.0 / s.p_norm[size_t(i)];
            for (int j = 0; j < d; ++j) {
                const double vj = (s.sz[size_t(j)] - zh[j]) * inv_pairs;
                out[j] += coeff * (vj - vdotp * ph[j]) * inv_norm;
            }
        }
        if (dZ) {
            double vdotz = 0.0;
            const double* ph = s.p_hat.data() + size_t(i) * d;
            const double* zh = s.z_hat.data() + size_t(i) * d;
            for (int j = 0; j < d; ++j) {
                const double vj = (s.sp[size_t(j)] - ph[j]) * inv_pairs;
                vdotz += vj * zh[j];
            }
            double* out = dZ->row(r);
            const double inv_norm = 1.0 / s.z_norm[size_t(i)];
            for (int j = 0; j < d; ++j) {
                const double vj = (s.sp[size_t(j)] - ph[j]) * inv_pairs;
                out[j] += coeff * (vj - vdotz * zh[j]) * inv_norm;
            }
        }
    }
}

}  // namespace

FeatureLossResult feature_loss(const EmbeddingBatch& batch, const FeatureLossOptions& opt,
                               Mat* dP, Mat* dZ, double coeff) {
    FeatureLossResult res;
    const int64_t n = batch.size();
    if (dZ && !batch.z_requires_grad) dZ = nullptr;

    // Group rows by class; pooled mode ignores the layer id here.
    std::map<int, std::vector<int64_t>> by_class;
    for (int64_t i = 0; i < n; ++i) by_class[batch.class_id[size_t(i)]].push_back(i);

    std::vector<ClassGroup> groups;
    for (auto& [cls, rows] : by_class)
        if (int64_t(rows.size()) >= 2) groups.push_back({cls, std::move(rows)});
    if (groups.empty()) {
        res.empty = true;
        return res;
    }

    std::vector<int64_t> counts;
    for (const auto& g : groups) counts.push_back(int64_t(g.rows.size()));
    res.weights = opt.weighted ? class_weights(counts)
                               : std::vector<double>(groups.size(), 1.0 / double(groups.size()));

    auto wf = [&](int layer_id) {
        if (opt.layer_weights.empty()) return 1.0;
        const size_t i = size_t(layer_id - 1);
        return i < opt.layer_weights.size() ? opt.layer_weights[i] : 1.0;
    };

    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        const double w_c = res.weights[gi];
        double s_c = 0.0;
        if (opt.pooled_layers) {
            const SubsetSim s = subset_similarity(batch, g.rows);
            s_c = s.value;
            // d(value)/dS_c = -w_c
            if (dP || dZ) subset_similarity_grad(batch, g.rows, s, -coeff * w_c, dP, dZ);
        } else {
            std::map<int, std::vector<int64_t>> by_layer;
            for (int64_t r : g.rows) by_layer[batch.layer_id[size_t(r)]].push_back(r);
            for (auto& [layer, rows] : by_layer) {
                if (int64_t(rows.size()) < 2) continue;
                const SubsetSim s = subset_similarity(batch, rows);
                s_c += wf(layer) * s.value;
                if (dP || dZ)
                    subset_similarity_grad(batch, rows, s, -coeff * w_c * wf(layer), dP, dZ);
            }
        }
        res.classes.push_back(g.cls);
        res.per_class_similarity.push_back(s_c);
        res.value -= w_c * s_c;
    }
    return res;
}

double total_loss(double dice, double feature, double lambda) {
    if (!std::isfinite(dice) || !std::isfinite(feature))
        throw NumericError("total_loss: non-finite input");
    return dice + lambda * feature;
}

}  // namespace voxelsim
