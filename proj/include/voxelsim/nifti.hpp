#pragma once

#include <array>
#include <string>

#include "voxelsim/volume.hpp"

namespace voxelsim {

/// Minimal NIfTI-1 reader (.nii and .nii.gz), enough for CT volumes and label
/// maps: handles int8/uint8/int16/uint16/int32/float32/float64, scl_slope /
/// scl_inter rescaling, and byte-swapped files. Only the first 3 dims are
/// read. Throws DataError on anything else.
struct NiftiImage {
    Shape3 shape;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<double> data;  // x-fastest, rescaled to physical values
};

NiftiImage read_nifti(const std::string& path);

bool looks_like_nifti(const std::string& path);

}  // namespace voxelsim
