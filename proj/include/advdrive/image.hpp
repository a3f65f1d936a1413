#pragma once

#include <cstdint>
#include <vector>

#include "advdrive/tensor.hpp"

namespace advdrive {

// RGB raster with values in [0, 1], stored channel-major ([3][H][W]) to
// match the tensor layout used by the models.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }

    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width;
    }
};

// [1, 3, H, W] tensor view of the pixels.
Tensor image_to_tensor(const Image& img, bool requires_grad = false);
Image tensor_to_image(const Tensor& t);

Image clamp01(const Image& img);
Image clamp(const Image& img, double lo, double hi);
Image add(const Image& a, const Image& b);
Image sub(const Image& a, const Image& b);

double max_abs(const Image& img);
double l2(const Image& img);

// 8-bit conversion, round half away from zero.
std::vector<uint8_t> to_rgb8(const Image& img);
Image from_rgb8(const std::vector<uint8_t>& rgb, int height, int width);

bool in_unit_range(const Image& img);

}  // namespace advdrive
