#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace advdrive {

// Minimal PNG support for the dataset pipeline: writes 8-bit RGB,
// reads 8-bit RGB or RGBA (alpha dropped). No Adam7 interlacing.
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb);
std::vector<uint8_t> read_png_rgb8(const std::string& path, int& width, int& height);

}  // namespace advdrive
