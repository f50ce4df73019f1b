#include "voxelsim/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace voxelsim {
namespace {

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double g, const double* w, double* acc, int n) {
    for (int i = 0; i < n; ++i) acc[i] += g * w[i];
}

constexpr double kBig = 1e20;  // stand-in for +inf inside the distance transform

// Lower envelope of parabolas (Felzenszwalb-Huttenlocher), with a per-axis
// squared spacing weight so anisotropic voxels come out in mm^2.
void dt1d(const double* f, double* d, int n, double w2, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kBig;
    z[1] = kBig;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + w2 * q * q) - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p));
            if (k > 0 && s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kBig;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        d[q] = w2 * double(q - p) * double(q - p) + f[p];
    }
}

struct LerpTap {
    int i0, i1;
    double w0, w1;
};

// Half-voxel aligned source tap for output index X of a 2x upsample.
inline LerpTap upsample2x_tap(int X, int n_in) {
    const double src = 0.5 * (X + 0.5) - 0.5;
    int lo = int(std::floor(src));
    const double frac = src - lo;
    LerpTap t;
    t.i0 = std::clamp(lo, 0, n_in - 1);
    t.i1 = std::clamp(lo + 1, 0, n_in - 1);
    t.w0 = 1.0 - frac;
    t.w1 = frac;
    return t;
}

inline LerpTap resample_tap(int X, int n_in, double scale) {
    const double src = std::clamp((X + 0.5) * scale - 0.5, 0.0, double(n_in - 1));
    int lo = int(std::floor(src));
    if (lo > n_in - 2) lo = std::max(0, n_in - 2);
    const double frac = src - lo;
    LerpTap t;
    t.i0 = lo;
    t.i1 = std::min(lo + 1, n_in - 1);
    t.w0 = 1.0 - frac;
    t.w1 = frac;
    return t;
}

}  // namespace

namespace kernels {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

void conv3d_forward(const double* in, const double* w, const double* bias, double* out,
                    const ConvDims& d) {
    const int k = d.k, pad = k / 2, kk = k * k * k;
    const int nx = d.nx, ny = d.ny, nz = d.nz, cin = d.cin, cout = d.cout;
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            const int dz0 = std::max(-pad, -z), dz1 = std::min(pad, nz - 1 - z);
            const int dy0 = std::max(-pad, -y), dy1 = std::min(pad, ny - 1 - y);
            const bool zy_full = dz0 == -pad && dz1 == pad && dy0 == -pad && dy1 == pad;
            double* orow = out + (int64_t(z) * ny + y) * nx * cout;
            for (int x = 0; x < nx; ++x) {
                double* ovox = orow + int64_t(x) * cout;
                if (k == 3 && zy_full && x >= 1 && x < nx - 1) {
                    // Interior fast path: the three x-neighbors are contiguous,
                    // so each (dz,dy) slab is a single dot of length 3*cin.
                    for (int oc = 0; oc < cout; ++oc) {
                        double acc = bias ? bias[oc] : 0.0;
                        const double* woc = w + int64_t(oc) * kk * cin;
                        for (int dz = -1; dz <= 1; ++dz) {
                            for (int dy = -1; dy <= 1; ++dy) {
                                const double* ib =
                                    in + ((int64_t(z + dz) * ny + (y + dy)) * nx + (x - 1)) * cin;
                                const double* wb = woc + ((dz + 1) * 3 + (dy + 1)) * 3 * cin;
                                acc += dot(ib, wb, 3 * cin);
                            }
                        }
                        ovox[oc] = acc;
                    }
                } else {
                    const int dx0 = std::max(-pad, -x), dx1 = std::min(pad, nx - 1 - x);
                    for (int oc = 0; oc < cout; ++oc) {
                        double acc = bias ? bias[oc] : 0.0;
                        const double* woc = w + int64_t(oc) * kk * cin;
                        for (int dz = dz0; dz <= dz1; ++dz) {
                            for (int dy = dy0; dy <= dy1; ++dy) {
                                for (int dx = dx0; dx <= dx1; ++dx) {
                                    const double* ib =
                                        in +
                                        ((int64_t(z + dz) * ny + (y + dy)) * nx + (x + dx)) * cin;
                                    const double* wb =
                                        woc + (((dz + pad) * k + (dy + pad)) * k + (dx + pad)) * cin;
                                    acc += dot(ib, wb, cin);
                                }
                            }
                        }
                        ovox[oc] = acc;
                    }
                }
            }
        }
    }
}

void conv3d_backward_input(const double* dout, const double* w, double* din, const ConvDims& d) {
    const int k = d.k, pad = k / 2, kk = k * k * k;
    const int nx = d.nx, ny = d.ny, nz = d.nz, cin = d.cin, cout = d.cout;
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            // din element (x,y,z) receives dout at v=(x,y,z)-delta for every
            // kernel offset delta with v inside the grid.
            const int dz0 = std::max(-pad, z - (nz - 1)), dz1 = std::min(pad, z);
            const int dy0 = std::max(-pad, y - (ny - 1)), dy1 = std::min(pad, y);
            for (int x = 0; x < nx; ++x) {
                double* dvox = din + ((int64_t(z) * ny + y) * nx + x) * cin;
                std::memset(dvox, 0, size_t(cin) * sizeof(double));
                const int dx0 = std::max(-pad, x - (nx - 1)), dx1 = std::min(pad, x);
                for (int dz = dz0; dz <= dz1; ++dz) {
                    for (int dy = dy0; dy <= dy1; ++dy) {
                        for (int dx = dx0; dx <= dx1; ++dx) {
                            const int64_t v =
                                (int64_t(z - dz) * ny + (y - dy)) * nx + (x - dx);
                            const int tap = ((dz + pad) * k + (dy + pad)) * k + (dx + pad);
                            const double* gv = dout + v * cout;
                            for (int oc = 0; oc < cout; ++oc) {
                                const double g = gv[oc];
                                if (g == 0.0) continue;
                                axpy(g, w + (int64_t(oc) * kk + tap) * cin, dvox, cin);
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_backward_params(const double* dout, const double* in, double* dw, double* db,
                            const ConvDims& d) {
    const int k = d.k, pad = k / 2, kk = k * k * k;
    const int nx = d.nx, ny = d.ny, nz = d.nz, cin = d.cin, cout = d.cout;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < cout; ++oc) {
        double* dwo = dw + int64_t(oc) * kk * cin;
        double dbo = 0.0;
        for (int z = 0; z < nz; ++z) {
            const int dz0 = std::max(-pad, -z), dz1 = std::min(pad, nz - 1 - z);
            for (int y = 0; y < ny; ++y) {
                const int dy0 = std::max(-pad, -y), dy1 = std::min(pad, ny - 1 - y);
                for (int x = 0; x < nx; ++x) {
                    const double g = dout[((int64_t(z) * ny + y) * nx + x) * cout + oc];
                    dbo += g;
                    if (g == 0.0) continue;
                    const int dx0 = std::max(-pad, -x), dx1 = std::min(pad, nx - 1 - x);
                    for (int dz = dz0; dz <= dz1; ++dz) {
                        for (int dy = dy0; dy <= dy1; ++dy) {
                            for (int dx = dx0; dx <= dx1; ++dx) {
                                const double* ib =
                                    in + ((int64_t(z + dz) * ny + (y + dy)) * nx + (x + dx)) * cin;
                                double* wb =
                                    dwo + (((dz + pad) * k + (dy + pad)) * k + (dx + pad)) * cin;
                                axpy(g, ib, wb, cin);
                            }
                        }
                    }
                }
            }
        }
        db[oc] += dbo;
    }
}

// ---------------------------------------------------------------------------
// Transposed convolution 2x2x2, stride 2
// ---------------------------------------------------------------------------

void tconv2x_forward(const double* in, const double* w, const double* bias, double* out,
                     const TconvDims& d) {
    const int nx = d.nx, ny = d.ny, nz = d.nz, cin = d.cin, cout = d.cout;
    const int ox = 2 * nx, oy = 2 * ny, oz = 2 * nz;
#pragma omp parallel for collapse(2) schedule(static)
    for (int Z = 0; Z < oz; ++Z) {
        for (int Y = 0; Y < oy; ++Y) {
            const int z = Z >> 1, y = Y >> 1;
            const int tzy = ((Z & 1) * 2 + (Y & 1)) * 2;
            for (int X = 0; X < ox; ++X) {
                const int x = X >> 1;
                const int tap = tzy + (X & 1);
                const double* ivox = in + ((int64_t(z) * ny + y) * nx + x) * cin;
                double* ovox = out + ((int64_t(Z) * oy + Y) * ox + X) * cout;
                const double* wt = w + int64_t(tap) * cout * cin;
                for (int oc = 0; oc < cout; ++oc) {
                    double acc = bias ? bias[oc] : 0.0;
                    acc += dot(ivox, wt + int64_t(oc) * cin, cin);
                    ovox[oc] = acc;
                }
            }
        }
    }
}

void tconv2x_backward_input(const double* dout, const double* w, double* din,
                            const TconvDims& d) {
    const int nx = d.nx, ny = d.ny, nz = d.nz, cin = d.cin, cout = d.cout;
    const int ox = 2 * nx, oy = 2 * ny;
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                double* dvox = din + ((int64_t(z) * ny + y) * nx + x) * cin;
                std::memset(dvox, 0, size_t(cin) * sizeof(double));
                for (int tap = 0; tap < 8; ++tap) {
                    const int Z = 2 * z + (tap >> 2), Y = 2 * y + ((tap >> 1) & 1),
                              X = 2 * x + (tap & 1);
                    const double* gv = dout + ((int64_t(Z) * oy + Y) * ox + X) * cout;
                    const double* wt = w + int64_t(tap) * cout * cin;
                    for (int oc = 0; oc < cout; ++oc) {
                        const double g = gv[oc];
                        if (g == 0.0) continue;
                        axpy(g, wt + int64_t(oc) * cin, dvox, cin);
                    }
                }
            }
        }
    }
}

void tconv2x_backward_params(const double* dout, const double* in, double* dw, double* db,
                             const TconvDims& d) {
    const int nx = d.nx, ny = d.ny, nz = d.nz, cin = d.cin, cout = d.cout;
    const int ox = 2 * nx, oy = 2 * ny;
#pragma omp parallel for collapse(2) schedule(static)
    for (int tap = 0; tap < 8; ++tap) {
        for (int oc = 0; oc < cout; ++oc) {
            double* dwp = dw + (int64_t(tap) * cout + oc) * cin;
            const int tz = tap >> 2, ty = (tap >> 1) & 1, tx = tap & 1;
            for (int z = 0; z < nz; ++z) {
                for (int y = 0; y < ny; ++y) {
                    for (int x = 0; x < nx; ++x) {
                        const double g =
                            dout[((int64_t(2 * z + tz) * oy + (2 * y + ty)) * ox + (2 * x + tx)) *
                                     cout +
                                 oc];
                        if (g == 0.0) continue;
                        axpy(g, in + ((int64_t(z) * ny + y) * nx + x) * cin, dwp, cin);
                    }
                }
            }
        }
    }
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < cout; ++oc) {
        double acc = 0.0;
        const int64_t n = int64_t(ox) * oy * 2 * nz;
        for (int64_t v = 0; v < n; ++v) acc += dout[v * cout + oc];
        db[oc] += acc;
    }
}

// ---------------------------------------------------------------------------
// Pooling / upsampling
// ---------------------------------------------------------------------------

void maxpool2x_forward(const double* in, double* out, int64_t* argmax, int nx, int ny, int nz,
                       int c) {
    const int mx = nx / 2, my = ny / 2, mz = nz / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int Z = 0; Z < mz; ++Z) {
        for (int Y = 0; Y < my; ++Y) {
            for (int X = 0; X < mx; ++X) {
                const int64_t o = ((int64_t(Z) * my + Y) * mx + X) * c;
                for (int ch = 0; ch < c; ++ch) {
                    double best = -kBig;
                    int64_t best_i = -1;
                    for (int tap = 0; tap < 8; ++tap) {
                        const int z = 2 * Z + (tap >> 2), y = 2 * Y + ((tap >> 1) & 1),
                                  x = 2 * X + (tap & 1);
                        const int64_t i = ((int64_t(z) * ny + y) * nx + x) * c + ch;
                        if (in[i] > best) {
                            best = in[i];
                            best_i = i;
                        }
                    }
                    out[o + ch] = best;
                    argmax[o + ch] = best_i;
                }
            }
        }
    }
}

void maxpool2x_backward(const double* dout, const int64_t* argmax, double* din, int nx, int ny,
                        int nz, int c) {
    const int64_t n_in = int64_t(nx) * ny * nz * c;
    const int64_t n_out = n_in / 8;
    std::memset(din, 0, size_t(n_in) * sizeof(double));
    // Pool windows are disjoint, so the scatter below is race-free.
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < n_out; ++o) din[argmax[o]] += dout[o];
}

void upsample2x_forward(const double* in, double* out, int nx, int ny, int nz, int c) {
    const int ox = 2 * nx, oy = 2 * ny, oz = 2 * nz;
#pragma omp parallel for collapse(2) schedule(static)
    for (int Z = 0; Z < oz; ++Z) {
        for (int Y = 0; Y < oy; ++Y) {
            const LerpTap tz = upsample2x_tap(Z, nz), ty = upsample2x_tap(Y, ny);
            for (int X = 0; X < ox; ++X) {
                const LerpTap tx = upsample2x_tap(X, nx);
                double* ovox = out + ((int64_t(Z) * oy + Y) * ox + X) * c;
                std::memset(ovox, 0, size_t(c) * sizeof(double));
                const int zi[2] = {tz.i0, tz.i1};
                const double zw[2] = {tz.w0, tz.w1};
                const int yi[2] = {ty.i0, ty.i1};
                const double yw[2] = {ty.w0, ty.w1};
                const int xi[2] = {tx.i0, tx.i1};
                const double xw[2] = {tx.w0, tx.w1};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int e = 0; e < 2; ++e) {
                            const double wgt = zw[a] * yw[b] * xw[e];
                            if (wgt == 0.0) continue;
                            const double* ivox =
                                in + ((int64_t(zi[a]) * ny + yi[b]) * nx + xi[e]) * c;
                            axpy(wgt, ivox, ovox, c);
                        }
            }
        }
    }
}

void upsample2x_backward(const double* dout, double* din, int nx, int ny, int nz, int c) {
    const int ox = 2 * nx, oy = 2 * ny, oz = 2 * nz;
    // Reverse taps per axis: which outputs pull from source index s, with what
    // weight. Built serially, then the gather over sources is race-free.
    auto reverse_axis = [](int n_in, int n_out) {
        std::vector<std::vector<std::pair<int, double>>> rev(static_cast<size_t>(n_in));
        for (int X = 0; X < n_out; ++X) {
            const LerpTap t = upsample2x_tap(X, n_in);
            if (t.w0 != 0.0) rev[size_t(t.i0)].push_back({X, t.w0});
            if (t.w1 != 0.0) rev[size_t(t.i1)].push_back({X, t.w1});
        }
        return rev;
    };
    const auto rx = reverse_axis(nx, ox), ry = reverse_axis(ny, oy), rz = reverse_axis(nz, oz);
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                double* dvox = din + ((int64_t(z) * ny + y) * nx + x) * c;
                std::memset(dvox, 0, size_t(c) * sizeof(double));
                for (const auto& [Z, wz] : rz[size_t(z)])
                    for (const auto& [Y, wy] : ry[size_t(y)]) {
                        const double wzy = wz * wy;
                        for (const auto& [X, wx] : rx[size_t(x)]) {
                            const double* gv =
                                dout + ((int64_t(Z) * oy + Y) * ox + X) * c;
                            axpy(wzy * wx, gv, dvox, c);
                        }
                    }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise / normalization / dense
// ---------------------------------------------------------------------------

void relu_forward(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* dy, const double* y, double* dx, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
}

void instance_norm_forward(const double* x, double* y, const double* gamma, const double* beta,
                           double* mean, double* invstd, int64_t nvox, int c, double eps) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0, s2 = 0.0;
        for (int64_t v = 0; v < nvox; ++v) {
            const double xv = x[v * c + ch];
            s += xv;
            s2 += xv * xv;
        }
        const double m = s / double(nvox);
        const double var = std::max(0.0, s2 / double(nvox) - m * m);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[ch] = m;
        invstd[ch] = is;
        const double g = gamma[ch], b = beta[ch];
        for (int64_t v = 0; v < nvox; ++v) y[v * c + ch] = (x[v * c + ch] - m) * is * g + b;
    }
}

void instance_norm_backward(const double* dy, const double* x, const double* gamma,
                            const double* mean, const double* invstd, double* dx, double* dgamma,
                            double* dbeta, int64_t nvox, int c) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double m = mean[ch], is = invstd[ch], g = gamma[ch];
        double sum_dy = 0.0, sum_dyxh = 0.0;
        for (int64_t v = 0; v < nvox; ++v) {
            const double gy = dy[v * c + ch];
            sum_dy += gy;
            sum_dyxh += gy * (x[v * c + ch] - m) * is;
        }
        dgamma[ch] += sum_dyxh;
        dbeta[ch] += sum_dy;
        const double inv_n = 1.0 / double(nvox);
        for (int64_t v = 0; v < nvox; ++v) {
            const double xh = (x[v * c + ch] - m) * is;
            dx[v * c + ch] = g * is * (dy[v * c + ch] - sum_dy * inv_n - xh * sum_dyxh * inv_n);
        }
    }
}

void linear_forward(const double* x, const double* w, const double* b, double* y, int64_t n,
                    int din, int dout) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const double* xr = x + i * din;
        double* yr = y + i * dout;
        for (int o = 0; o < dout; ++o) yr[o] = (b ? b[o] : 0.0) + dot(xr, w + int64_t(o) * din, din);
    }
}

void linear_backward_input(const double* dy, const double* w, double* dx, int64_t n, int din,
                           int dout) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        double* dxr = dx + i * din;
        std::memset(dxr, 0, size_t(din) * sizeof(double));
        const double* dyr = dy + i * dout;
        for (int o = 0; o < dout; ++o) {
            if (dyr[o] == 0.0) continue;
            axpy(dyr[o], w + int64_t(o) * din, dxr, din);
        }
    }
}

void linear_backward_params(const double* dy, const double* x, double* dw, double* db, int64_t n,
                            int din, int dout) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < dout; ++o) {
        double* dwo = dw + int64_t(o) * din;
        double acc_b = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double g = dy[i * dout + o];
            acc_b += g;
            if (g == 0.0) continue;
            axpy(g, x + i * din, dwo, din);
        }
        db[o] += acc_b;
    }
}

void layer_norm_forward(const double* x, double* y, const double* gamma, const double* beta,
                        double* mean, double* invstd, int64_t n, int d, double eps) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const double* xr = x + i * d;
        double s = 0.0, s2 = 0.0;
        for (int j = 0; j < d; ++j) {
            s += xr[j];
            s2 += xr[j] * xr[j];
        }
        const double m = s / d;
        const double var = std::max(0.0, s2 / d - m * m);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[i] = m;
        invstd[i] = is;
        double* yr = y + i * d;
        for (int j = 0; j < d; ++j) yr[j] = (xr[j] - m) * is * gamma[j] + beta[j];
    }
}

void layer_norm_backward(const double* dy, const double* x, const double* gamma,
                         const double* mean, const double* invstd, double* dx, double* dgamma,
                         double* dbeta, int64_t n, int d) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const double* xr = x + i * d;
        const double* dyr = dy + i * d;
        const double m = mean[i], is = invstd[i];
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double gdy = dyr[j] * gamma[j];
            s1 += gdy;
            s2 += gdy * (xr[j] - m) * is;
        }
        double* dxr = dx + i * d;
        for (int j = 0; j < d; ++j) {
            const double xh = (xr[j] - m) * is;
            dxr[j] = is * (dyr[j] * gamma[j] - s1 / d - xh * s2 / d);
        }
    }
    // Parameter grads in a second pass, parallel over dims so the accumulation
    // is race-free.
#pragma omp parallel for schedule(static)
    for (int j = 0; j < d; ++j) {
        double dg = 0.0, dbv = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double xh = (x[i * d + j] - mean[i]) * invstd[i];
            dg += dy[i * d + j] * xh;
            dbv += dy[i * d + j];
        }
        dgamma[j] += dg;
        dbeta[j] += dbv;
    }
}

void softmax_channels(const double* x, double* y, int64_t nvox, int c) {
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < nvox; ++v) {
        const double* xr = x + v * c;
        double* yr = y + v * c;
        double mx = xr[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
        double s = 0.0;
        for (int i = 0; i < c; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            s += yr[i];
        }
        const double inv = 1.0 / s;
        for (int i = 0; i < c; ++i) yr[i] *= inv;
    }
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

void resample_trilinear(const double* in, Shape3 in_s, double* out, Shape3 out_s) {
    const double sx = double(in_s.nx) / out_s.nx;
    const double sy = double(in_s.ny) / out_s.ny;
    const double sz = double(in_s.nz) / out_s.nz;
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < out_s.nz; ++z) {
        for (int y = 0; y < out_s.ny; ++y) {
            const LerpTap tz = resample_tap(z, in_s.nz, sz);
            const LerpTap ty = resample_tap(y, in_s.ny, sy);
            for (int x = 0; x < out_s.nx; ++x) {
                const LerpTap tx = resample_tap(x, in_s.nx, sx);
                double acc = 0.0;
                const int zi[2] = {tz.i0, tz.i1};
                const double zw[2] = {tz.w0, tz.w1};
                const int yi[2] = {ty.i0, ty.i1};
                const double yw[2] = {ty.w0, ty.w1};
                const int xi[2] = {tx.i0, tx.i1};
                const double xw[2] = {tx.w0, tx.w1};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int e = 0; e < 2; ++e)
                            acc += zw[a] * yw[b] * xw[e] *
                                   in[flat_index(in_s, xi[e], yi[b], zi[a])];
                out[flat_index(out_s, x, y, z)] = acc;
            }
        }
    }
}

template <typename T>
void resample_nearest(const T* in, Shape3 in_s, T* out, Shape3 out_s) {
    const double sx = double(in_s.nx) / out_s.nx;
    const double sy = double(in_s.ny) / out_s.ny;
    const double sz = double(in_s.nz) / out_s.nz;
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < out_s.nz; ++z) {
        for (int y = 0; y < out_s.ny; ++y) {
            const int zi = std::min(in_s.nz - 1, int((z + 0.5) * sz));
            const int yi = std::min(in_s.ny - 1, int((y + 0.5) * sy));
            for (int x = 0; x < out_s.nx; ++x) {
                const int xi = std::min(in_s.nx - 1, int((x + 0.5) * sx));
                out[flat_index(out_s, x, y, z)] = in[flat_index(in_s, xi, yi, zi)];
            }
        }
    }
}

template void resample_nearest<uint8_t>(const uint8_t*, Shape3, uint8_t*, Shape3);
template void resample_nearest<int32_t>(const int32_t*, Shape3, int32_t*, Shape3);
template void resample_nearest<double>(const double*, Shape3, double*, Shape3);

// ---------------------------------------------------------------------------
// Distance transform
// ---------------------------------------------------------------------------

void edt_squared(const uint8_t* feature, double* dist2, Shape3 s, const double spacing[3]) {
    const int nx = s.nx, ny = s.ny, nz = s.nz;
    const double wx = spacing[0] * spacing[0];
    const double wy = spacing[1] * spacing[1];
    const double wz = spacing[2] * spacing[2];

    // Pass 1: along x.
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            std::vector<double> f(static_cast<size_t>(nx)), dd(static_cast<size_t>(nx));
            std::vector<int> v(static_cast<size_t>(nx));
            std::vector<double> zb(static_cast<size_t>(nx) + 1);
            const int64_t base = (int64_t(z) * ny + y) * nx;
            for (int x = 0; x < nx; ++x) f[size_t(x)] = feature[base + x] ? 0.0 : kBig;
            dt1d(f.data(), dd.data(), nx, wx, v.data(), zb.data());
            for (int x = 0; x < nx; ++x) dist2[base + x] = dd[size_t(x)];
        }
    }
    // Pass 2: along y.
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < nz; ++z) {
        for (int x = 0; x < nx; ++x) {
            std::vector<double> f(static_cast<size_t>(ny)), dd(static_cast<size_t>(ny));
            std::vector<int> v(static_cast<size_t>(ny));
            std::vector<double> zb(static_cast<size_t>(ny) + 1);
            for (int y = 0; y < ny; ++y) f[size_t(y)] = dist2[(int64_t(z) * ny + y) * nx + x];
            dt1d(f.data(), dd.data(), ny, wy, v.data(), zb.data());
            for (int y = 0; y < ny; ++y) dist2[(int64_t(z) * ny + y) * nx + x] = dd[size_t(y)];
        }
    }
    // Pass 3: along z.
#pragma omp parallel for collapse(2) schedule(static)
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            std::vector<double> f(static_cast<size_t>(nz)), dd(static_cast<size_t>(nz));
            std::vector<int> v(static_cast<size_t>(nz));
            std::vector<double> zb(static_cast<size_t>(nz) + 1);
            for (int z = 0; z < nz; ++z) f[size_t(z)] = dist2[(int64_t(z) * ny + y) * nx + x];
            dt1d(f.data(), dd.data(), nz, wz, v.data(), zb.data());
            for (int z = 0; z < nz; ++z) dist2[(int64_t(z) * ny + y) * nx + x] = dd[size_t(z)];
        }
    }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Serial reference implementations
// ---------------------------------------------------------------------------

namespace reference {

void conv3d_forward(const double* in, const double* w, const double* bias, double* out,
                    const kernels::ConvDims& d) {
    const int k = d.k, pad = k / 2, kk = k * k * k;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x)
                for (int oc = 0; oc < d.cout; ++oc) {
                    double acc = bias ? bias[oc] : 0.0;
                    for (int dz = -pad; dz <= pad; ++dz)
                        for (int dy = -pad; dy <= pad; ++dy)
                            for (int dx = -pad; dx <= pad; ++dx) {
                                const int zz = z + dz, yy = y + dy, xx = x + dx;
                                if (zz < 0 || zz >= d.nz || yy < 0 || yy >= d.ny || xx < 0 ||
                                    xx >= d.nx)
                                    continue;
                                const int tap = ((dz + pad) * k + (dy + pad)) * k + (dx + pad);
                                for (int ic = 0; ic < d.cin; ++ic)
                                    acc += in[((int64_t(zz) * d.ny + yy) * d.nx + xx) * d.cin +
                                              ic] *
                                           w[(int64_t(oc) * kk + tap) * d.cin + ic];
                            }
                    out[((int64_t(z) * d.ny + y) * d.nx + x) * d.cout + oc] = acc;
                }
}

void conv3d_backward_input(const double* dout, const double* w, double* din,
                           const kernels::ConvDims& d) {
    const int k = d.k, pad = k / 2, kk = k * k * k;
    std::memset(din, 0, size_t(d.voxels()) * d.cin * sizeof(double));
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x)
                for (int oc = 0; oc < d.cout; ++oc) {
                    const double g = dout[((int64_t(z) * d.ny + y) * d.nx + x) * d.cout + oc];
                    if (g == 0.0) continue;
                    for (int dz = -pad; dz <= pad; ++dz)
                        for (int dy = -pad; dy <= pad; ++dy)
                            for (int dx = -pad; dx <= pad; ++dx) {
                                const int zz = z + dz, yy = y + dy, xx = x + dx;
                                if (zz < 0 || zz >= d.nz || yy < 0 || yy >= d.ny || xx < 0 ||
                                    xx >= d.nx)
                                    continue;
                                const int tap = ((dz + pad) * k + (dy + pad)) * k + (dx + pad);
                                for (int ic = 0; ic < d.cin; ++ic)
                                    din[((int64_t(zz) * d.ny + yy) * d.nx + xx) * d.cin + ic] +=
                                        g * w[(int64_t(oc) * kk + tap) * d.cin + ic];
                            }
                }
}

void conv3d_backward_params(const double* dout, const double* in, double* dw, double* db,
                            const kernels::ConvDims& d) {
    const int k = d.k, pad = k / 2, kk = k * k * k;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x)
                for (int oc = 0; oc < d.cout; ++oc) {
                    const double g = dout[((int64_t(z) * d.ny + y) * d.nx + x) * d.cout + oc];
                    db[oc] += g;
                    if (g == 0.0) continue;
                    for (int dz = -pad; dz <= pad; ++dz)
                        for (int dy = -pad; dy <= pad; ++dy)
                            for (int dx = -pad; dx <= pad; ++dx) {
                                const int zz = z + dz, yy = y + dy, xx = x + dx;
                                if (zz < 0 || zz >= d.nz || yy < 0 || yy >= d.ny || xx < 0 ||
                                    xx >= d.nx)
                                    continue;
                                const int tap = ((dz + pad) * k + (dy + pad)) * k + (dx + pad);
                                for (int ic = 0; ic < d.cin; ++ic)
                                    dw[(int64_t(oc) * kk + tap) * d.cin + ic] +=
                                        g * in[((int64_t(zz) * d.ny + yy) * d.nx + xx) * d.cin +
                                               ic];
                            }
                }
}

void resample_trilinear(const double* in, Shape3 in_s, double* out, Shape3 out_s) {
    const double sx = double(in_s.nx) / out_s.nx;
    const double sy = double(in_s.ny) / out_s.ny;
    const double sz = double(in_s.nz) / out_s.nz;
    for (int z = 0; z < out_s.nz; ++z)
        for (int y = 0; y < out_s.ny; ++y)
            for (int x = 0; x < out_s.nx; ++x) {
                const LerpTap tz = resample_tap(z, in_s.nz, sz);
                const LerpTap ty = resample_tap(y, in_s.ny, sy);
                const LerpTap tx = resample_tap(x, in_s.nx, sx);
                double acc = 0.0;
                const int zi[2] = {tz.i0, tz.i1};
                const double zw[2] = {tz.w0, tz.w1};
                const int yi[2] = {ty.i0, ty.i1};
                const double yw[2] = {ty.w0, ty.w1};
                const int xi[2] = {tx.i0, tx.i1};
                const double xw[2] = {tx.w0, tx.w1};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int e = 0; e < 2; ++e)
                            acc += zw[a] * yw[b] * xw[e] *
                                   in[flat_index(in_s, xi[e], yi[b], zi[a])];
                out[flat_index(out_s, x, y, z)] = acc;
            }
}

void edt_squared(const uint8_t* feature, double* dist2, Shape3 s, const double spacing[3]) {
    const int nx = s.nx, ny = s.ny, nz = s.nz;
    const double w[3] = {spacing[0] * spacing[0], spacing[1] * spacing[1],
                         spacing[2] * spacing[2]};
    std::vector<double> f, dd, zb;
    std::vector<int> v;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y) {
            f.assign(size_t(nx), 0.0);
            dd.assign(size_t(nx), 0.0);
            v.assign(size_t(nx), 0);
            zb.assign(size_t(nx) + 1, 0.0);
            const int64_t base = (int64_t(z) * ny + y) * nx;
            for (int x = 0; x < nx; ++x) f[size_t(x)] = feature[base + x] ? 0.0 : kBig;
            dt1d(f.data(), dd.data(), nx, w[0], v.data(), zb.data());
            for (int x = 0; x < nx; ++x) dist2[base + x] = dd[size_t(x)];
        }
    for (int z = 0; z < nz; ++z)
        for (int x = 0; x < nx; ++x) {
            f.assign(size_t(ny), 0.0);
            dd.assign(size_t(ny), 0.0);
            v.assign(size_t(ny), 0);
            zb.assign(size_t(ny) + 1, 0.0);
            for (int y = 0; y < ny; ++y) f[size_t(y)] = dist2[(int64_t(z) * ny + y) * nx + x];
            dt1d(f.data(), dd.data(), ny, w[1], v.data(), zb.data());
            for (int y = 0; y < ny; ++y) dist2[(int64_t(z) * ny + y) * nx + x] = dd[size_t(y)];
        }
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            f.assign(size_t(nz), 0.0);
            dd.assign(size_t(nz), 0.0);
            v.assign(size_t(nz), 0);
            zb.assign(size_t(nz) + 1, 0.0);
            for (int z = 0; z < nz; ++z) f[size_t(z)] = dist2[(int64_t(z) * ny + y) * nx + x];
            dt1d(f.data(), dd.data(), nz, w[2], v.data(), zb.data());
            for (int z = 0; z < nz; ++z) dist2[(int64_t(z) * ny + y) * nx + x] = dd[size_t(z)];
        }
}

}  // namespace reference
}  // namespace voxelsim
