#pragma once

#include <cstdint>

#include "voxelsim/volume.hpp"

namespace voxelsim {

// ---------------------------------------------------------------------------
// Data-parallel kernels behind the network, the resampler and the metrics.
//
// All kernels in voxelsim::kernels are OpenMP-parallel. Parallelism is only
// ever over independent output elements (never reduction clauses), so results
// are bitwise identical for any thread count. voxelsim::reference holds plain
// serial implementations of the hot kernels; tests check the parallel kernels
// against them and tools/bench_kernels compares their throughput.
//
// Layouts (see volume.hpp): feature maps are channel-fastest, conv weights are
// w[oc][tap][ic] with tap = (dz*k + dy)*k + dx, linear weights are w[out][in].
// ---------------------------------------------------------------------------

namespace kernels {

struct ConvDims {
    int nx, ny, nz;  // spatial extents (same for input and output; stride 1)
    int cin, cout;
    int k;  // kernel size per axis, odd (1 or 3 in practice), zero padding k/2
    int64_t voxels() const { return int64_t(nx) * ny * nz; }
    int64_t weight_count() const { return int64_t(cout) * k * k * k * cin; }
};

void conv3d_forward(const double* in, const double* w, const double* bias, double* out,
                    const ConvDims& d);
void conv3d_backward_input(const double* dout, const double* w, double* din, const ConvDims& d);
// Accumulates into dw/db (caller zeroes once per optimization step).
void conv3d_backward_params(const double* dout, const double* in, double* dw, double* db,
                            const ConvDims& d);

// Transposed conv, kernel 2, stride 2 (each output voxel has exactly one
// source voxel). Weight layout w[tap][oc][ic], tap = (dz*2 + dy)*2 + dx.
struct TconvDims {
    int nx, ny, nz;  // input extents; output is 2nx x 2ny x 2nz
    int cin, cout;
    int64_t weight_count() const { return int64_t(8) * cout * cin; }
};

void tconv2x_forward(const double* in, const double* w, const double* bias, double* out,
                     const TconvDims& d);
void tconv2x_backward_input(const double* dout, const double* w, double* din, const TconvDims& d);
void tconv2x_backward_params(const double* dout, const double* in, double* dw, double* db,
                             const TconvDims& d);

// Max pooling 2x2x2, stride 2. Input extents must be even. argmax holds the
// linear input voxel index feeding each output voxel.
void maxpool2x_forward(const double* in, double* out, int64_t* argmax, int nx, int ny, int nz,
                       int c);
void maxpool2x_backward(const double* dout, const int64_t* argmax, double* din, int nx, int ny,
                        int nz, int c);

// Trilinear 2x upsampling (half-voxel aligned, clamped edges) and its adjoint.
void upsample2x_forward(const double* in, double* out, int nx, int ny, int nz, int c);
void upsample2x_backward(const double* dout, double* din, int nx, int ny, int nz, int c);

void relu_forward(const double* x, double* y, int64_t n);
void relu_backward(const double* dy, const double* y, double* dx, int64_t n);

// Instance norm: per-channel statistics over the spatial grid of one volume.
void instance_norm_forward(const double* x, double* y, const double* gamma, const double* beta,
                           double* mean, double* invstd, int64_t nvox, int c, double eps);
void instance_norm_backward(const double* dy, const double* x, const double* gamma,
                            const double* mean, const double* invstd, double* dx, double* dgamma,
                            double* dbeta, int64_t nvox, int c);

// Dense layer over an N x din row-major batch.
void linear_forward(const double* x, const double* w, const double* b, double* y, int64_t n,
                    int din, int dout);
void linear_backward_input(const double* dy, const double* w, double* dx, int64_t n, int din,
                           int dout);
void linear_backward_params(const double* dy, const double* x, double* dw, double* db, int64_t n,
                            int din, int dout);

// Per-row layer norm with affine parameters.
void layer_norm_forward(const double* x, double* y, const double* gamma, const double* beta,
                        double* mean, double* invstd, int64_t n, int d, double eps);
void layer_norm_backward(const double* dy, const double* x, const double* gamma,
                         const double* mean, const double* invstd, double* dx, double* dgamma,
                         double* dbeta, int64_t n, int d);

// Channel-axis softmax per voxel.
void softmax_channels(const double* x, double* y, int64_t nvox, int c);

// General trilinear resampling between grids (half-voxel aligned, clamped).
void resample_trilinear(const double* in, Shape3 in_s, double* out, Shape3 out_s);

// Nearest-neighbor resampling: each output cell takes the input cell that
// contains its center point (half-open cells).
template <typename T>
void resample_nearest(const T* in, Shape3 in_s, T* out, Shape3 out_s);

// Squared Euclidean distance transform with anisotropic spacing (mm).
// feature != 0 marks the target set; dist2 gets the squared distance from
// every voxel to the nearest feature voxel (voxel centers), or +inf if the
// feature set is empty.
void edt_squared(const uint8_t* feature, double* dist2, Shape3 s, const double spacing[3]);

}  // namespace kernels

namespace reference {

// Serial counterparts used by tests and benchmarks.
void conv3d_forward(const double* in, const double* w, const double* bias, double* out,
                    const kernels::ConvDims& d);
void conv3d_backward_input(const double* dout, const double* w, double* din,
                           const kernels::ConvDims& d);
void conv3d_backward_params(const double* dout, const double* in, double* dw, double* db,
                            const kernels::ConvDims& d);
void resample_trilinear(const double* in, Shape3 in_s, double* out, Shape3 out_s);
void edt_squared(const uint8_t* feature, double* dist2, Shape3 s, const double spacing[3]);

}  // namespace reference
}  // namespace voxelsim
