#include "mscnet/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mscnet {

namespace {

constexpr uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
constexpr size_t kMaxChunk = size_t(1) << 30;

std::vector<uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path);
    return bytes;
}

void spill(const std::string& path, const uint8_t* data, size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    out.write(reinterpret_cast<const char*>(data), (std::streamsize)n);
    if (!out) throw IoError("write failed for " + path);
}

uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
    const int p = int(a) + int(b) - int(c);
    const int pa = std::abs(p - int(a));
    const int pb = std::abs(p - int(b));
    const int pc = std::abs(p - int(c));
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

// Reverses the per-row PNG filter in place; rows carry their filter byte.
void unfilter(std::vector<uint8_t>& raw, size_t h, size_t stride, size_t bpp,
              const std::string& path) {
    std::vector<uint8_t> prior(stride, 0);
    for (size_t y = 0; y < h; ++y) {
        uint8_t* row = raw.data() + y * (stride + 1);
        const uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        switch (filter) {
            case 0:
                break;
            case 1:
                for (size_t i = bpp; i < stride; ++i) cur[i] = uint8_t(cur[i] + cur[i - bpp]);
                break;
            case 2:
                for (size_t i = 0; i < stride; ++i) cur[i] = uint8_t(cur[i] + prior[i]);
                break;
            case 3:
                for (size_t i = 0; i < stride; ++i) {
                    const int left = i >= bpp ? cur[i - bpp] : 0;
                    cur[i] = uint8_t(cur[i] + (left + int(prior[i])) / 2);
                }
                break;
            case 4:
                for (size_t i = 0; i < stride; ++i) {
                    const uint8_t left = i >= bpp ? cur[i - bpp] : 0;
                    const uint8_t upleft = i >= bpp ? prior[i - bpp] : 0;
                    cur[i] = uint8_t(cur[i] + paeth(left, prior[i], upleft));
                }
                break;
            default:
                throw FormatError(path + ": unknown PNG filter " + std::to_string(filter));
        }
        std::memcpy(prior.data(), cur, stride);
    }
}

// PNM header tokenizer: skips whitespace and '#' comments.
size_t pnm_token(const std::vector<uint8_t>& bytes, size_t pos, const std::string& path) {
    while (pos < bytes.size()) {
        if (std::isspace(bytes[pos])) {
            ++pos;
        } else if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else {
            return pos;
        }
    }
    throw FormatError(path + ": truncated PNM header");
}

size_t pnm_number(const std::vector<uint8_t>& bytes, size_t& pos, const std::string& path) {
    pos = pnm_token(bytes, pos, path);
    if (!std::isdigit(bytes[pos])) throw FormatError(path + ": malformed PNM header");
    size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        v = v * 10 + size_t(bytes[pos] - '0');
        if (v > 1u << 24) throw FormatError(path + ": implausible PNM dimension");
        ++pos;
    }
    return v;
}

}  // namespace

Image read_png(const std::string& path) {
    const std::vector<uint8_t> bytes = slurp(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) {
        throw FormatError(path + ": not a PNG file");
    }

    size_t w = 0, h = 0;
    int color = -1;
    bool saw_ihdr = false, saw_iend = false;
    std::vector<uint8_t> idat;

    size_t pos = 8;
    while (pos < bytes.size() && !saw_iend) {
        if (pos + 12 > bytes.size()) throw FormatError(path + ": truncated PNG chunk");
        const size_t len = read_be32(&bytes[pos]);
        if (len > kMaxChunk || pos + 12 + len > bytes.size()) {
            throw FormatError(path + ": PNG chunk overruns file");
        }
        const uint8_t* type = &bytes[pos + 4];
        const uint8_t* data = &bytes[pos + 8];
        const uint32_t want_crc = read_be32(&bytes[pos + 8 + len]);
        uint32_t crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, type, 4 + (uInt)len);
        if (crc != want_crc) throw FormatError(path + ": PNG chunk CRC mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError(path + ": bad IHDR length");
            w = read_be32(data);
            h = read_be32(data + 4);
            const int depth = data[8];
            color = data[9];
            const int interlace = data[12];
            if (w == 0 || h == 0 || w > (1u << 24) || h > (1u << 24)) {
                throw FormatError(path + ": implausible PNG dimensions");
            }
            if (depth != 8) throw FormatError(path + ": only 8-bit PNG supported");
            if (color != 0 && color != 2 && color != 4 && color != 6) {
                throw FormatError(path + ": unsupported PNG color type " + std::to_string(color));
            }
            if (data[10] != 0 || data[11] != 0) throw FormatError(path + ": bad PNG header flags");
            if (interlace != 0) throw FormatError(path + ": interlaced PNG unsupported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!saw_ihdr) throw FormatError(path + ": IDAT before IHDR");
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty()) throw FormatError(path + ": incomplete PNG");

    const size_t src_ch = color == 0 ? 1 : color == 2 ? 3 : color == 4 ? 2 : 4;
    const size_t stride = w * src_ch;
    std::vector<uint8_t> raw(h * (stride + 1));
    uLongf raw_len = (uLongf)raw.size();
    const int zrc = uncompress(raw.data(), &raw_len, idat.data(), (uLong)idat.size());
    if (zrc != Z_OK || raw_len != raw.size()) {
        throw FormatError(path + ": PNG pixel data does not inflate to the expected size");
    }
    unfilter(raw, h, stride, src_ch, path);

    const size_t dst_ch = src_ch >= 3 ? 3 : 1;
    Image img(w, h, dst_ch);
    for (size_t y = 0; y < h; ++y) {
        const uint8_t* row = raw.data() + y * (stride + 1) + 1;
        for (size_t x = 0; x < w; ++x) {
            for (size_t c = 0; c < dst_ch; ++c) img.at(y, x, c) = row[x * src_ch + c];
        }
    }
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw InvalidArgument("write_png: image must have 1 or 3 channels");
    }
    if (img.pixels.size() != img.width * img.height * img.channels) {
        throw InvalidArgument("write_png: pixel buffer does not match dimensions");
    }

    const size_t stride = img.width * img.channels;
    std::vector<uint8_t> raw(img.height * (stride + 1));
    for (size_t y = 0; y < img.height; ++y) {
        raw[y * (stride + 1)] = 0;  // filter: none
        std::memcpy(raw.data() + y * (stride + 1) + 1, img.pixels.data() + y * stride, stride);
    }
    uLongf bound = compressBound((uLong)raw.size());
    std::vector<uint8_t> deflated(bound);
    if (compress2(deflated.data(), &bound, raw.data(), (uLong)raw.size(), 6) != Z_OK) {
        throw IoError("write_png: deflate failed for " + path);
    }
    deflated.resize(bound);

    std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);
    auto chunk = [&out](const char* type, const std::vector<uint8_t>& data) {
        push_be32(out, (uint32_t)data.size());
        const size_t type_at = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        uint32_t crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, out.data() + type_at, (uInt)(4 + data.size()));
        push_be32(out, crc);
    };

    std::vector<uint8_t> ihdr;
    push_be32(ihdr, (uint32_t)img.width);
    push_be32(ihdr, (uint32_t)img.height);
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);          // gray / truecolor
    ihdr.insert(ihdr.end(), {0, 0, 0});                 // deflate, filter 0, no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", deflated);
    chunk("IEND", {});
    spill(path, out.data(), out.size());
}

Image read_pnm(const std::string& path) {
    const std::vector<uint8_t> bytes = slurp(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError(path + ": not a binary PGM/PPM file");
    }
    const size_t ch = bytes[1] == '5' ? 1 : 3;
    size_t pos = 2;
    const size_t w = pnm_number(bytes, pos, path);
    const size_t h = pnm_number(bytes, pos, path);
    const size_t maxval = pnm_number(bytes, pos, path);
    if (w == 0 || h == 0) throw FormatError(path + ": zero PNM dimension");
    if (maxval == 0 || maxval > 255) {
        throw FormatError(path + ": PNM maxval " + std::to_string(maxval) + " unsupported");
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw FormatError(path + ": malformed PNM header");
    }
    ++pos;  // single whitespace separates header from raster

    Image img(w, h, ch);
    if (bytes.size() - pos < img.pixels.size()) throw FormatError(path + ": truncated PNM raster");
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        const size_t v = bytes[pos + i];
        img.pixels[i] = maxval == 255 ? (uint8_t)v : (uint8_t)((v * 255 + maxval / 2) / maxval);
    }
    return img;
}

void write_pnm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw InvalidArgument("write_pnm: image must have 1 or 3 channels");
    }
    if (img.pixels.size() != img.width * img.height * img.channels) {
        throw InvalidArgument("write_pnm: pixel buffer does not match dimensions");
    }
    std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                         std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    spill(path, out.data(), out.size());
}

Image read_image(const std::string& path) {
    const std::vector<uint8_t> head = slurp(path);
    if (head.size() >= 8 && std::memcmp(head.data(), kPngSignature, 8) == 0) return read_png(path);
    if (head.size() >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '6')) {
        return read_pnm(path);
    }
    throw FormatError(path + ": unrecognized image format (want PNG or binary PGM/PPM)");
}

void write_image(const std::string& path, const Image& img) {
    const size_t dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".png") {
        write_png(path, img);
    } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
        write_pnm(path, img);
    } else {
        throw InvalidArgument("write_image: cannot infer format from '" + path + "'");
    }
}

std::vector<real> resize_bilinear(const real* src, size_t src_h, size_t src_w, size_t dst_h,
                                  size_t dst_w) {
    if (src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0) {
        throw InvalidArgument("resize_bilinear: empty extent");
    }
    std::vector<real> out(dst_h * dst_w);
    const real sy = (real)src_h / (real)dst_h;
    const real sx = (real)src_w / (real)dst_w;
    for (size_t y = 0; y < dst_h; ++y) {
        const real fy = ((real)y + real(0.5)) * sy - real(0.5);
        const real cy = std::clamp(fy, real(0), (real)(src_h - 1));
        const size_t y0 = (size_t)cy;
        const size_t y1 = std::min(y0 + 1, src_h - 1);
        const real wy = cy - (real)y0;
        for (size_t x = 0; x < dst_w; ++x) {
            const real fx = ((real)x + real(0.5)) * sx - real(0.5);
            const real cx = std::clamp(fx, real(0), (real)(src_w - 1));
            const size_t x0 = (size_t)cx;
            const size_t x1 = std::min(x0 + 1, src_w - 1);
            const real wx = cx - (real)x0;
            const real top = src[y0 * src_w + x0] * (real(1) - wx) + src[y0 * src_w + x1] * wx;
            const real bot = src[y1 * src_w + x0] * (real(1) - wx) + src[y1 * src_w + x1] * wx;
            out[y * dst_w + x] = top * (real(1) - wy) + bot * wy;
        }
    }
    return out;
}

std::vector<real> resize_nearest(const real* src, size_t src_h, size_t src_w, size_t dst_h,
                                 size_t dst_w) {
    if (src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0) {
        throw InvalidArgument("resize_nearest: empty extent");
    }
    std::vector<real> out(dst_h * dst_w);
    const real sy = (real)src_h / (real)dst_h;
    const real sx = (real)src_w / (real)dst_w;
    for (size_t y = 0; y < dst_h; ++y) {
        const size_t ys = std::min(src_h - 1, (size_t)(((real)y + real(0.5)) * sy));
        for (size_t x = 0; x < dst_w; ++x) {
            const size_t xs = std::min(src_w - 1, (size_t)(((real)x + real(0.5)) * sx));
            out[y * dst_w + x] = src[ys * src_w + xs];
        }
    }
    return out;
}

}  // namespace mscnet
