#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mscnet/common.hpp"

namespace mscnet {

// 8-bit interleaved raster with 1 (gray) or 3 (RGB) channels.
struct Image {
    size_t width = 0, height = 0, channels = 1;
    std::vector<uint8_t> pixels;  // row-major, channel-interleaved

    Image() = default;
    Image(size_t w, size_t h, size_t ch) : width(w), height(h), channels(ch), pixels(w * h * ch) {}

    uint8_t& at(size_t y, size_t x, size_t c) { return pixels[(y * width + x) * channels + c]; }
    uint8_t at(size_t y, size_t x, size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

// Readers accept 8-bit depth only. PNG color types 0/2/4/6 are supported with
// alpha dropped; palette and interlaced files are rejected. PNM covers binary
// P5/P6 with a maxval up to 255 (smaller maxvals are rescaled).
Image read_png(const std::string& path);
Image read_pnm(const std::string& path);
// Dispatches on the file's magic bytes.
Image read_image(const std::string& path);

// Writers emit 8-bit gray or RGB; PNG uses filter 0 scanlines.
void write_png(const std::string& path, const Image& img);
void write_pnm(const std::string& path, const Image& img);
// Dispatches on the extension: .png, else .pgm/.ppm/.pnm.
void write_image(const std::string& path, const Image& img);

// Float-plane resampling used for tensor-space resizing. Bilinear places
// sample points at half-pixel centers (src = (dst + 0.5) * scale - 0.5),
// nearest snaps those centers to the closest source pixel.
std::vector<real> resize_bilinear(const real* src, size_t src_h, size_t src_w, size_t dst_h,
                                  size_t dst_w);
std::vector<real> resize_nearest(const real* src, size_t src_h, size_t src_w, size_t dst_h,
                                 size_t dst_w);

}  // namespace mscnet
