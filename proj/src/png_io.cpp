#include "advdrive/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace advdrive {

namespace {

const uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

std::vector<uint8_t> deflate_all(const std::vector<uint8_t>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> packed(bound);
    if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("png: deflate failed");
    }
    packed.resize(bound);
    return packed;
}

std::vector<uint8_t> inflate_all(const std::vector<uint8_t>& packed, size_t expected) {
    std::vector<uint8_t> raw(expected);
    uLongf len = static_cast<uLongf>(expected);
    const int rc = uncompress(raw.data(), &len, packed.data(), static_cast<uLong>(packed.size()));
    if (rc != Z_OK || len != expected) {
        throw std::runtime_error("png: inflate failed or size mismatch");
    }
    return raw;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb) {
    if (width <= 0 || height <= 0 ||
        rgb.size() != static_cast<size_t>(width) * height * 3) {
        throw std::invalid_argument("png: pixel buffer does not match dimensions");
    }
    const size_t stride = static_cast<size_t>(width) * 3;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), rgb.begin() + y * stride, rgb.begin() + (y + 1) * stride);
    }

    std::vector<uint8_t> out(kSignature, kSignature + 8);
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(width));
    put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", deflate_all(raw));
    append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("png: cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

std::vector<uint8_t> read_png_rgb8(const std::string& path, int& width, int& height) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
        throw std::runtime_error("png: bad signature: " + path);
    }

    size_t pos = 8;
    int w = 0, h = 0, bit_depth = 0, color_type = 0;
    bool saw_ihdr = false;
    std::vector<uint8_t> idat;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated: " + path);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("png: bad IHDR: " + path);
            w = static_cast<int>(get_u32(payload));
            h = static_cast<int>(get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw std::runtime_error("png: interlaced not supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || w <= 0 || h <= 0) throw std::runtime_error("png: missing IHDR: " + path);
    if (bit_depth != 8 || (color_type != 2 && color_type != 6)) {
        throw std::runtime_error("png: only 8-bit RGB/RGBA supported: " + path);
    }
    const int channels = color_type == 2 ? 3 : 4;
    const size_t stride = static_cast<size_t>(w) * channels;
    std::vector<uint8_t> raw = inflate_all(idat, (stride + 1) * h);

    // Undo per-row filters in place.
    std::vector<uint8_t> pixels(static_cast<size_t>(w) * h * channels);
    for (int y = 0; y < h; ++y) {
        const uint8_t filter = raw[y * (stride + 1)];
        const uint8_t* src = raw.data() + y * (stride + 1) + 1;
        uint8_t* dst = pixels.data() + y * stride;
        const uint8_t* up = y > 0 ? pixels.data() + (y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            const int left = i >= static_cast<size_t>(channels) ? dst[i - channels] : 0;
            const int above = up ? up[i] : 0;
            const int corner = (up && i >= static_cast<size_t>(channels)) ? up[i - channels] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += above; break;
                case 3: v += (left + above) / 2; break;
                case 4: v += paeth(left, above, corner); break;
                default: throw std::runtime_error("png: unknown filter: " + path);
            }
            dst[i] = static_cast<uint8_t>(v & 0xff);
        }
    }

    width = w;
    height = h;
    if (channels == 3) return pixels;
    std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
    for (size_t p = 0; p < static_cast<size_t>(w) * h; ++p) {
        rgb[p * 3 + 0] = pixels[p * 4 + 0];
        rgb[p * 3 + 1] = pixels[p * 4 + 1];
        rgb[p * 3 + 2] = pixels[p * 4 + 2];
    }
    return rgb;
}

}  // namespace advdrive
