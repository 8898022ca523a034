#pragma once

#include <string>

#include "coconv/common.hpp"

namespace coconv {

// Spatial size of a feature map.
struct SpatialSize {
    index_t h = 0;
    index_t w = 0;
    bool operator==(const SpatialSize&) const = default;
};

// Geometry of one 2-D convolution. Padding is symmetric zero-padding.
struct ConvGeometry {
    index_t in_channels = 0;
    index_t out_channels = 0;
    index_t kernel_h = 0;
    index_t kernel_w = 0;
    index_t stride = 1;
    index_t padding = 0;
    index_t dilation = 1;
    bool has_bias = false;

    void validate() const {
        if (in_channels < 1 || out_channels < 1)
            throw GeometryError("conv geometry: channel counts must be >= 1");
        if (kernel_h < 1 || kernel_w < 1)
            throw GeometryError("conv geometry: kernel dims must be >= 1");
        if (stride < 1) throw GeometryError("conv geometry: stride must be >= 1");
        if (padding < 0) throw GeometryError("conv geometry: padding must be >= 0");
        if (dilation < 1) throw GeometryError("conv geometry: dilation must be >= 1");
    }

    // Spatial extent actually covered by the dilated kernel.
    index_t extent_h() const { return dilation * (kernel_h - 1) + 1; }
    index_t extent_w() const { return dilation * (kernel_w - 1) + 1; }

    index_t weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

inline index_t sliding_output_extent(index_t in, index_t kernel, index_t stride, index_t padding,
                                     index_t dilation) {
    const index_t extent = dilation * (kernel - 1) + 1;
    if (extent > in + 2 * padding) {
        throw GeometryError("effective kernel extent " + std::to_string(extent) +
                            " exceeds padded input " + std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - extent) / stride + 1;
}

inline SpatialSize conv_output_shape(SpatialSize in, const ConvGeometry& g) {
    g.validate();
    return SpatialSize{sliding_output_extent(in.h, g.kernel_h, g.stride, g.padding, g.dilation),
                       sliding_output_extent(in.w, g.kernel_w, g.stride, g.padding, g.dilation)};
}

// Padding that keeps the output size equal to the input size at stride 1
// for an odd kernel: p = d*(K-1)/2.
inline index_t same_padding(index_t kernel, index_t dilation) {
    if (kernel % 2 == 0) {
        throw GeometryError("same padding requires an odd kernel, got " + std::to_string(kernel));
    }
    return dilation * (kernel - 1) / 2;
}

}  // namespace coconv
