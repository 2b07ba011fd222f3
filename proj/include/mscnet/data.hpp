#pragma once

#include <string>
#include <vector>

#include "mscnet/image.hpp"
#include "mscnet/tensor.hpp"

namespace mscnet {

// One training or evaluation example: image is [3,H,W] in [0,1], mask is
// [1,H,W] strictly {0,1}, H and W multiples of 32.
struct Sample {
    Tensor image;
    Tensor mask;
    std::string id;
};

// Procedural scene recipe; the same spec always renders the same bytes.
// Large salient blobs are axis-aligned ellipses, small ones rectangles, so a
// single-object scene has analytically checkable geometry.
struct SceneSpec {
    uint64_t seed = 0;
    size_t size = 64;            // square canvas, multiple of 32
    size_t n_small = 2;          // small salient rectangles
    size_t n_large = 1;          // large salient ellipses
    bool slender = false;        // add a thin salient curve spanning the frame
    real clutter = real(0.3);    // background distractor density in [0,1]
    real bg_level = real(0.5);   // mean background intensity
    real contrast = real(0.35);  // minimum salient/background separation
};

struct ManifestEntry {
    std::string image_path;
    std::string mask_path;
    std::string split;  // "train" / "val" / "test" style tag
};

// Tab-separated manifest, one "image\tmask\tsplit" line each. Relative paths
// resolve against the manifest's directory. Every referenced file must exist
// (all offenders reported at once) and no image/mask pair may appear under
// two different splits.
std::vector<ManifestEntry> load_manifest(const std::string& path);

// Loads an image/mask pair, bilinear-resizing the image and nearest-resizing
// the mask to target_size x target_size; target_size 0 keeps the native
// size, which then must match between the two files. Mask bytes >= 128 are
// foreground. The final square side must be a multiple of 32.
Sample load_sample(const std::string& image_path, const std::string& mask_path,
                   size_t target_size, const std::string& id = "");

// Renders the scene: anti-aliased bright/dark salient shapes, an optional
// 2-4 px wide curve spanning the left and right frame edges, plus non-salient
// clutter. The mask marks exactly the salient shapes. Image values land on
// the 8-bit grid k/255, so a save/load round trip reproduces them exactly.
Sample synth_scene(const SceneSpec& spec);

// Writes the sample as 8-bit image files; format chosen by extension.
void save_sample(const Sample& s, const std::string& image_path, const std::string& mask_path);

// Horizontal/vertical flips with p = 0.5 each, then a rotation drawn from
// {0, 90, 180, 270} degrees clockwise, applied identically to image and
// mask. Fixed draw order (hflip, vflip, quarter turns) keeps runs seedable.
Sample augment(const Sample& s, Rng& rng);

// Raster <-> tensor conversions, values scaled between {0..255} and [0,1].
Tensor image_to_tensor(const Image& img);  // [3,H,W]; gray inputs replicate
Tensor mask_to_tensor(const Image& img);   // [1,H,W]; threshold 128
Image tensor_to_image(const Tensor& t);    // [1|3,H,W] -> rounded 8-bit

}  // namespace mscnet
