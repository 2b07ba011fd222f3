#include "mscnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

namespace fs = std::filesystem;

namespace mscnet {

namespace {

constexpr real kPi = real(3.14159265358979323846);

struct Blob {
    bool ellipse;
    real cx, cy, ax, ay;  // center and half-extents in pixels
    real color[3];
};

bool inside(const Blob& b, real px, real py) {
    if (b.ellipse) {
        const real u = (px - b.cx) / b.ax;
        const real v = (py - b.cy) / b.ay;
        return u * u + v * v <= real(1);
    }
    return std::abs(px - b.cx) <= b.ax && std::abs(py - b.cy) <= b.ay;
}

// 2x2 subsample coverage for anti-aliased image edges; the mask stays binary
// via the pixel-center test.
real coverage(const Blob& b, size_t x, size_t y) {
    real acc = 0;
    for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
            if (inside(b, (real)x + real(0.25) + real(0.5) * (real)sx,
                       (real)y + real(0.25) + real(0.5) * (real)sy)) {
                acc += real(0.25);
            }
        }
    }
    return acc;
}

void composite_blob(Tensor& image, Tensor* mask, const Blob& b, size_t S) {
    const size_t x0 = (size_t)std::max(real(0), std::floor(b.cx - b.ax - 1));
    const size_t x1 = std::min(S, (size_t)std::max(real(0), std::ceil(b.cx + b.ax + 1)));
    const size_t y0 = (size_t)std::max(real(0), std::floor(b.cy - b.ay - 1));
    const size_t y1 = std::min(S, (size_t)std::max(real(0), std::ceil(b.cy + b.ay + 1)));
    for (size_t y = y0; y < y1; ++y) {
        for (size_t x = x0; x < x1; ++x) {
            const real a = coverage(b, x, y);
            if (a == real(0)) continue;
            for (size_t c = 0; c < 3; ++c) {
                real& px = image[(c * S + y) * S + x];
                px = (real(1) - a) * px + a * b.color[c];
            }
            if (mask && inside(b, (real)x + real(0.5), (real)y + real(0.5))) {
                (*mask)[y * S + x] = 1;
            }
        }
    }
}

real bezier(real p0, real p1, real p2, real p3, real t) {
    const real u = real(1) - t;
    return u * u * u * p0 + real(3) * u * u * t * p1 + real(3) * u * t * t * p2 + t * t * t * p3;
}

// Destination->source coordinate map for flips followed by clockwise quarter
// turns, shared by image and mask so they stay aligned.
Tensor permute_chw(const Tensor& t, bool hf, bool vf, size_t rot) {
    const size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    const size_t OH = rot % 2 ? W : H;
    const size_t OW = rot % 2 ? H : W;
    Tensor out({C, OH, OW});
    for (size_t c = 0; c < C; ++c) {
        for (size_t oy = 0; oy < OH; ++oy) {
            for (size_t ox = 0; ox < OW; ++ox) {
                size_t fy = 0, fx = 0;  // coordinates before the rotation
                switch (rot) {
                    case 0: fy = oy; fx = ox; break;
                    case 1: fy = H - 1 - ox; fx = oy; break;
                    case 2: fy = H - 1 - oy; fx = W - 1 - ox; break;
                    case 3: fy = ox; fx = W - 1 - oy; break;
                }
                const size_t sy = vf ? H - 1 - fy : fy;
                const size_t sx = hf ? W - 1 - fx : fx;
                out[(c * OH + oy) * OW + ox] = t[(c * H + sy) * W + sx];
            }
        }
    }
    return out;
}

std::string path_stem(const std::string& p) { return fs::path(p).stem().string(); }

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&base](const std::string& s) {
        const fs::path p(s);
        return (p.is_absolute() ? p : base / p).lexically_normal().string();
    };

    std::vector<ManifestEntry> entries;
    std::map<std::pair<std::string, std::string>, std::string> split_of;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw FormatError(path + ":" + std::to_string(lineno) +
                              ": expected image<TAB>mask<TAB>split");
        }
        ManifestEntry e;
        e.image_path = resolve(line.substr(0, t1));
        e.mask_path = resolve(line.substr(t1 + 1, t2 - t1 - 1));
        e.split = line.substr(t2 + 1);
        if (e.image_path.empty() || e.mask_path.empty() || e.split.empty()) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": empty manifest field");
        }
        const auto key = std::make_pair(e.image_path, e.mask_path);
        auto [it, fresh] = split_of.emplace(key, e.split);
        if (!fresh && it->second != e.split) {
            throw InvalidArgument(path + ":" + std::to_string(lineno) + ": " + e.image_path +
                                  " appears in splits '" + it->second + "' and '" + e.split + "'");
        }
        entries.push_back(std::move(e));
    }

    std::string missing;
    for (const ManifestEntry& e : entries) {
        for (const std::string* p : {&e.image_path, &e.mask_path}) {
            if (!fs::exists(*p)) missing += (missing.empty() ? "" : ", ") + *p;
        }
    }
    if (!missing.empty()) throw IoError(path + ": missing files: " + missing);
    return entries;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({3, img.height, img.width});
    for (size_t y = 0; y < img.height; ++y) {
        for (size_t x = 0; x < img.width; ++x) {
            for (size_t c = 0; c < 3; ++c) {
                const uint8_t v = img.at(y, x, img.channels == 3 ? c : 0);
                t[(c * img.height + y) * img.width + x] = (real)v / real(255);
            }
        }
    }
    return t;
}

Tensor mask_to_tensor(const Image& img) {
    Tensor t({1, img.height, img.width});
    for (size_t y = 0; y < img.height; ++y) {
        for (size_t x = 0; x < img.width; ++x) {
            t[y * img.width + x] = img.at(y, x, 0) >= 128 ? real(1) : real(0);
        }
    }
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
        throw InvalidArgument("tensor_to_image: expected [1|3,H,W], got " + shape_str(t.shape()));
    }
    const size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    Image img(W, H, C);
    for (size_t y = 0; y < H; ++y) {
        for (size_t x = 0; x < W; ++x) {
            for (size_t c = 0; c < C; ++c) {
                const real v = std::clamp(t[(c * H + y) * W + x], real(0), real(1));
                img.at(y, x, c) = (uint8_t)std::llround((double)(v * real(255)));
            }
        }
    }
    return img;
}

Sample load_sample(const std::string& image_path, const std::string& mask_path,
                   size_t target_size, const std::string& id) {
    const Image im = read_image(image_path);
    const Image mk = read_image(mask_path);
    if (target_size == 0 && (im.width != mk.width || im.height != mk.height)) {
        throw IoError("size mismatch between " + image_path + " (" + std::to_string(im.width) +
                      "x" + std::to_string(im.height) + ") and " + mask_path + " (" +
                      std::to_string(mk.width) + "x" + std::to_string(mk.height) + ")");
    }
    const size_t H = target_size ? target_size : im.height;
    const size_t W = target_size ? target_size : im.width;
    if (H == 0 || W == 0 || H % 32 != 0 || W % 32 != 0) {
        throw InvalidArgument("load_sample: sample size " + std::to_string(W) + "x" +
                              std::to_string(H) + " is not a positive multiple of 32");
    }

    Sample s;
    s.id = id.empty() ? path_stem(image_path) : id;

    const Tensor native = image_to_tensor(im);
    s.image = Tensor({3, H, W});
    for (size_t c = 0; c < 3; ++c) {
        const std::vector<real> plane =
            resize_bilinear(native.data() + c * im.height * im.width, im.height, im.width, H, W);
        std::copy(plane.begin(), plane.end(), s.image.data() + c * H * W);
    }

    std::vector<real> mplane(mk.height * mk.width);
    for (size_t y = 0; y < mk.height; ++y) {
        for (size_t x = 0; x < mk.width; ++x) mplane[y * mk.width + x] = (real)mk.at(y, x, 0);
    }
    const std::vector<real> mres = resize_nearest(mplane.data(), mk.height, mk.width, H, W);
    s.mask = Tensor({1, H, W});
    for (size_t i = 0; i < mres.size(); ++i) s.mask[i] = mres[i] >= real(128) ? real(1) : real(0);
    return s;
}

void save_sample(const Sample& s, const std::string& image_path, const std::string& mask_path) {
    write_image(image_path, tensor_to_image(s.image));
    write_image(mask_path, tensor_to_image(s.mask));
}

Sample synth_scene(const SceneSpec& spec) {
    if (spec.size < 32 || spec.size % 32 != 0) {
        throw InvalidArgument("synth_scene: canvas size must be a positive multiple of 32");
    }
    if (spec.clutter < real(0) || spec.clutter > real(1)) {
        throw InvalidArgument("synth_scene: clutter density must lie in [0,1]");
    }
    if (spec.n_small + spec.n_large > 64) {
        throw InvalidArgument("synth_scene: too many salient objects");
    }
    if (!(spec.bg_level > real(0) && spec.bg_level < real(1))) {
        throw InvalidArgument("synth_scene: bg_level must lie in (0,1)");
    }
    if (!(spec.contrast > real(0) && spec.contrast <= real(0.5))) {
        throw InvalidArgument("synth_scene: contrast must lie in (0, 0.5]");
    }

    Rng rng(spec.seed);
    const size_t S = spec.size;
    Sample out;
    out.id = "synth-" + std::to_string(spec.seed);
    out.image = Tensor({3, S, S});
    out.mask = Tensor({1, S, S});
    Tensor& image = out.image;
    Tensor& mask = out.mask;

    // Textured background: per-channel base, one low-frequency wave, and
    // per-pixel noise shared across channels so it reads as luminance grain.
    real bgc[3];
    for (real& c : bgc) {
        c = std::clamp(spec.bg_level + (real)rng.uniform(-0.03, 0.03), real(0.05), real(0.95));
    }
    const real wfx = (real)rng.uniform(1.0, 3.0);
    const real wfy = (real)rng.uniform(1.0, 3.0);
    const real phase = (real)rng.uniform(0.0, 2.0 * (double)kPi);
    const real wave_amp = real(0.02) + real(0.05) * spec.clutter;
    const real noise_amp = real(0.01) + real(0.03) * spec.clutter;
    for (size_t y = 0; y < S; ++y) {
        for (size_t x = 0; x < S; ++x) {
            const real wave = std::sin(real(2) * kPi * wfx * (real)x / (real)S + phase) *
                              std::cos(real(2) * kPi * wfy * (real)y / (real)S);
            const real noise = (real)rng.uniform(-(double)noise_amp, (double)noise_amp);
            for (size_t c = 0; c < 3; ++c) {
                image[(c * S + y) * S + x] = bgc[c] + wave_amp * wave + noise;
            }
        }
    }

    auto make_color = [&](real min_delta, real max_delta, real* color) {
        const real sign = rng.bernoulli(0.5) ? real(1) : real(-1);
        const real delta = (real)rng.uniform((double)min_delta, (double)max_delta);
        for (size_t c = 0; c < 3; ++c) {
            const real jitter = (real)rng.uniform(0.85, 1.15);
            color[c] = std::clamp(bgc[c] + sign * delta * jitter, real(0), real(1));
        }
    };

    // Low-contrast, non-salient distractors under everything salient.
    const size_t n_clutter = (size_t)std::llround((double)spec.clutter * 12.0);
    for (size_t i = 0; i < n_clutter; ++i) {
        Blob b;
        b.ellipse = rng.bernoulli(0.5);
        b.ax = (real)rng.uniform((double)S / 20.0, (double)S / 8.0);
        b.ay = (real)rng.uniform((double)S / 20.0, (double)S / 8.0);
        b.cx = (real)rng.uniform(0.0, (double)S);
        b.cy = (real)rng.uniform(0.0, (double)S);
        make_color(real(0.04), std::max(real(0.05), std::min(real(0.12), spec.contrast * real(0.5))),
                   b.color);
        composite_blob(image, nullptr, b, S);
    }

    // Salient shapes: large axis-aligned ellipses, then small rectangles.
    auto place_salient = [&](bool ellipse, real lo, real hi) {
        Blob b;
        b.ellipse = ellipse;
        b.ax = (real)rng.uniform((double)(lo * (real)S), (double)(hi * (real)S));
        b.ay = (real)rng.uniform((double)(lo * (real)S), (double)(hi * (real)S));
        const real margin = std::max(b.ax, b.ay) + real(2);
        b.cx = (real)rng.uniform((double)margin, (double)((real)S - margin));
        b.cy = (real)rng.uniform((double)margin, (double)((real)S - margin));
        make_color(spec.contrast, spec.contrast + real(0.25), b.color);
        composite_blob(image, &mask, b, S);
    };
    for (size_t i = 0; i < spec.n_large; ++i) place_salient(true, real(1) / 6, real(1) / 4);
    for (size_t i = 0; i < spec.n_small; ++i) place_salient(false, real(1) / 16, real(1) / 9);

    // Slender salient curve spanning the left and right frame edges.
    if (spec.slender) {
        const real x0 = 0, x3 = (real)S - 1;
        const real y0 = (real)rng.uniform(0.15, 0.85) * (real)S;
        const real y3 = (real)rng.uniform(0.15, 0.85) * (real)S;
        const real x1 = (real)rng.uniform(0.2, 0.5) * (real)S;
        const real x2 = (real)rng.uniform(0.5, 0.8) * (real)S;
        const real y1 = (real)rng.uniform(0.1, 0.9) * (real)S;
        const real y2 = (real)rng.uniform(0.1, 0.9) * (real)S;
        const real radius = (real)rng.uniform(1.0, 2.0);  // 2-4 px wide
        real color[3];
        make_color(spec.contrast, spec.contrast + real(0.25), color);

        std::vector<real> alpha(S * S, 0);
        const size_t steps = 6 * S;
        for (size_t k = 0; k <= steps; ++k) {
            const real t = (real)k / (real)steps;
            const real px = bezier(x0, x1, x2, x3, t);
            const real py = bezier(y0, y1, y2, y3, t);
            const size_t xa = (size_t)std::max(real(0), std::floor(px - radius - 1));
            const size_t xb = std::min(S, (size_t)std::max(real(0), std::ceil(px + radius + 2)));
            const size_t ya = (size_t)std::max(real(0), std::floor(py - radius - 1));
            const size_t yb = std::min(S, (size_t)std::max(real(0), std::ceil(py + radius + 2)));
            for (size_t y = ya; y < yb; ++y) {
                for (size_t x = xa; x < xb; ++x) {
                    const real dx = (real)x + real(0.5) - px;
                    const real dy = (real)y + real(0.5) - py;
                    const real dist = std::sqrt(dx * dx + dy * dy);
                    const real a = std::clamp(radius + real(0.5) - dist, real(0), real(1));
                    alpha[y * S + x] = std::max(alpha[y * S + x], a);
                    if (dist <= radius) mask[y * S + x] = 1;
                }
            }
        }
        for (size_t i = 0; i < S * S; ++i) {
            if (alpha[i] == real(0)) continue;
            for (size_t c = 0; c < 3; ++c) {
                real& px = image[c * S * S + i];
                px = (real(1) - alpha[i]) * px + alpha[i] * color[c];
            }
        }
    }

    // Snap to the 8-bit grid so that saving and reloading is the identity.
    for (real& v : image.values()) {
        v = (real)std::llround((double)(std::clamp(v, real(0), real(1)) * real(255))) / real(255);
    }
    return out;
}

Sample augment(const Sample& s, Rng& rng) {
    const bool hf = rng.bernoulli(0.5);
    const bool vf = rng.bernoulli(0.5);
    const size_t rot = rng.integer(4);
    Sample out;
    out.id = s.id;
    out.image = permute_chw(s.image, hf, vf, rot);
    out.mask = permute_chw(s.mask, hf, vf, rot);
    return out;
}

}  // namespace mscnet
