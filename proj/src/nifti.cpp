#include "voxelsim/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <vector>

namespace voxelsim {
namespace {

template <typename T>
T byteswap_val(T v) {
    char* p = reinterpret_cast<char*>(&v);
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    return v;
}

// NIfTI-1 header, 348 bytes. Only the fields we consume are named.
#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

std::vector<char> read_whole_file(const std::string& path) {
    // gzread handles both gzip-compressed and plain files.
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open file: " + path);
    std::vector<char> out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw DataError("decompression error reading " + path);
    return out;
}

enum NiftiType : int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUint16 = 512,
};

template <typename T>
void convert(const char* raw, size_t n, bool swap, double slope, double inter,
             std::vector<double>& out) {
    const T* p = reinterpret_cast<const T*>(raw);
    out.resize(n);
    for (size_t i = 0; i < n; ++i) {
        T v = p[i];
        if (swap) v = byteswap_val(v);
        out[i] = double(v) * slope + inter;
    }
}

}  // namespace

bool looks_like_nifti(const std::string& path) {
    auto ends_with = [&](const char* suf) {
        const size_t n = std::strlen(suf);
        return path.size() >= n && path.compare(path.size() - n, n, suf) == 0;
    };
    return ends_with(".nii") || ends_with(".nii.gz");
}

NiftiImage read_nifti(const std::string& path) {
    const std::vector<char> bytes = read_whole_file(path);
    if (bytes.size() < sizeof(Nifti1Header)) throw DataError("truncated NIfTI file: " + path);

    Nifti1Header h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        if (byteswap_val(h.sizeof_hdr) != 348)
            throw DataError("not a NIfTI-1 file (bad sizeof_hdr): " + path);
        swap = true;
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw DataError("not a NIfTI-1 file (bad magic): " + path);

    auto rd16 = [&](int16_t v) { return swap ? byteswap_val(v) : v; };
    auto rdf = [&](float v) { return swap ? byteswap_val(v) : v; };

    const int ndim = rd16(h.dim[0]);
    if (ndim < 3) throw DataError("NIfTI volume has fewer than 3 dims: " + path);
    Shape3 shape{rd16(h.dim[1]), rd16(h.dim[2]), rd16(h.dim[3])};
    for (int i = 4; i <= ndim; ++i)
        if (rd16(h.dim[i]) > 1)
            throw DataError("NIfTI volume has a non-singleton dim beyond 3: " + path);
    if (shape.nx <= 0 || shape.ny <= 0 || shape.nz <= 0)
        throw DataError("NIfTI volume has a non-positive extent: " + path);

    const int16_t dtype = rd16(h.datatype);
    double slope = rdf(h.scl_slope);
    const double inter = rdf(h.scl_inter);
    if (slope == 0.0) slope = 1.0;

    const size_t offset = size_t(rdf(h.vox_offset));
    const size_t n = size_t(shape.voxels());
    const size_t elem = size_t(rd16(h.bitpix)) / 8;
    if (bytes.size() < offset + n * elem) throw DataError("NIfTI data truncated: " + path);
    const char* raw = bytes.data() + offset;

    NiftiImage img;
    img.shape = shape;
    img.spacing = {std::abs(double(rdf(h.pixdim[1]))), std::abs(double(rdf(h.pixdim[2]))),
                   std::abs(double(rdf(h.pixdim[3])))};
    for (double& s : img.spacing)
        if (s <= 0.0) s = 1.0;

    switch (dtype) {
        case kUint8:
            convert<uint8_t>(raw, n, swap, slope, inter, img.data);
            break;
        case kInt8:
            convert<int8_t>(raw, n, swap, slope, inter, img.data);
            break;
        case kInt16:
            convert<int16_t>(raw, n, swap, slope, inter, img.data);
            break;
        case kUint16:
            convert<uint16_t>(raw, n, swap, slope, inter, img.data);
            break;
        case kInt32:
            convert<int32_t>(raw, n, swap, slope, inter, img.data);
            break;
        case kFloat32:
            convert<float>(raw, n, swap, slope, inter, img.data);
            break;
        case kFloat64:
            convert<double>(raw, n, swap, slope, inter, img.data);
            break;
        default:
            throw DataError("unsupported NIfTI datatype " + std::to_string(dtype) + ": " + path);
    }
    return img;
}

}  // namespace voxelsim
