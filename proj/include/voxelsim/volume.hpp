#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxelsim {

/// Grid extents of a 3D volume. Linear order is x-fastest:
/// index(x,y,z) = (z*ny + y)*nx + x.
struct Shape3 {
    int nx = 0, ny = 0, nz = 0;

    int64_t voxels() const { return int64_t(nx) * ny * nz; }
    bool operator==(const Shape3&) const = default;
    std::string str() const {
        return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
    }
};

inline int64_t flat_index(const Shape3& s, int x, int y, int z) {
    return (int64_t(z) * s.ny + y) * s.nx + x;
}

/// Dense scalar 3D grid (image intensities, labels, distance maps).
template <typename T>
struct Volume {
    Shape3 shape;
    std::vector<T> data;

    Volume() = default;
    explicit Volume(Shape3 s, T fill = T{}) : shape(s), data(size_t(s.voxels()), fill) {}

    T& operator()(int x, int y, int z) { return data[size_t(flat_index(shape, x, y, z))]; }
    const T& operator()(int x, int y, int z) const {
        return data[size_t(flat_index(shape, x, y, z))];
    }
    T& operator[](int64_t i) { return data[size_t(i)]; }
    const T& operator[](int64_t i) const { return data[size_t(i)]; }
    int64_t size() const { return int64_t(data.size()); }
};

/// Multi-channel 3D feature grid, channel-fastest:
/// index(x,y,z,c) = ((z*ny + y)*nx + x)*nc + c.
/// Equivalent to a C-order array of shape (nz, ny, nx, nc); matches the
/// H x W x D x C convention with x <-> H.
struct Fmap {
    int nx = 0, ny = 0, nz = 0, nc = 0;
    std::vector<double> v;

    Fmap() = default;
    Fmap(int nx_, int ny_, int nz_, int nc_, double fill = 0.0)
        : nx(nx_), ny(ny_), nz(nz_), nc(nc_), v(size_t(int64_t(nx_) * ny_ * nz_ * nc_), fill) {}
    Fmap(Shape3 s, int nc_, double fill = 0.0) : Fmap(s.nx, s.ny, s.nz, nc_, fill) {}

    Shape3 spatial() const { return {nx, ny, nz}; }
    int64_t voxels() const { return int64_t(nx) * ny * nz; }
    int64_t size() const { return int64_t(v.size()); }

    double* row(int64_t voxel) { return v.data() + size_t(voxel) * nc; }
    const double* row(int64_t voxel) const { return v.data() + size_t(voxel) * nc; }
    double& at(int x, int y, int z, int c) {
        return v[size_t((flat_index({nx, ny, nz}, x, y, z)) * nc + c)];
    }
    const double& at(int x, int y, int z, int c) const {
        return v[size_t((flat_index({nx, ny, nz}, x, y, z)) * nc + c)];
    }
    void zero() { std::memset(v.data(), 0, v.size() * sizeof(double)); }
};

/// Row-major N x D matrix of embeddings / per-voxel feature vectors.
struct Mat {
    int64_t n = 0;
    int d = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int64_t n_, int d_, double fill = 0.0) : n(n_), d(d_), v(size_t(n_) * d_, fill) {}

    double* row(int64_t i) { return v.data() + size_t(i) * d; }
    const double* row(int64_t i) const { return v.data() + size_t(i) * d; }
    double& at(int64_t i, int j) { return v[size_t(i) * d + j]; }
    double at(int64_t i, int j) const { return v[size_t(i) * d + j]; }
    void zero() { std::memset(v.data(), 0, v.size() * sizeof(double)); }
};

// ---------------------------------------------------------------------------
// Error categories. The CLI maps these onto exit codes (config 2, data 3,
// numerical 4).
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace voxelsim
