#include "advdrive/image.hpp"

#include <cmath>
#include <stdexcept>

namespace advdrive {

Tensor image_to_tensor(const Image& img, bool requires_grad) {
    return Tensor(Shape{1, 3, img.height, img.width}, img.data, requires_grad);
}

Image tensor_to_image(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != 3) {
        throw std::invalid_argument("tensor_to_image expects a [1,3,H,W] tensor");
    }
    Image img(s[2], s[3]);
    img.data = t.values();
    return img;
}

Image clamp(const Image& img, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp bounds must satisfy lo <= hi");
    Image out = img;
    for (double& v : out.data) v = std::min(hi, std::max(lo, v));
    return out;
}

Image clamp01(const Image& img) { return clamp(img, 0.0, 1.0); }

Image add(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("image shapes differ");
    Image out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Image sub(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("image shapes differ");
    Image out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

double max_abs(const Image& img) {
    double m = 0.0;
    for (double v : img.data) m = std::max(m, std::fabs(v));
    return m;
}

double l2(const Image& img) {
    double acc = 0.0;
    for (double v : img.data) acc += v * v;
    return std::sqrt(acc);
}

std::vector<uint8_t> to_rgb8(const Image& img) {
    std::vector<uint8_t> out(static_cast<size_t>(img.height) * img.width * 3);
    size_t i = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::min(1.0, std::max(0.0, img.at(c, y, x)));
                out[i++] = static_cast<uint8_t>(std::round(v * 255.0));
            }
        }
    }
    return out;
}

Image from_rgb8(const std::vector<uint8_t>& rgb, int height, int width) {
    if (rgb.size() != static_cast<size_t>(height) * width * 3) {
        throw std::invalid_argument("rgb byte count does not match dimensions");
    }
    Image img(height, width);
    size_t i = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = rgb[i++] / 255.0;
            }
        }
    }
    return img;
}

bool in_unit_range(const Image& img) {
    for (double v : img.data) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
    }
    return true;
}

}  // namespace advdrive
