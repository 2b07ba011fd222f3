#pragma once

#include <array>
#include <memory>
#include <vector>

#include "mscnet/module.hpp"

namespace mscnet {

// Width scaling: channels scale by alpha and snap to the nearest multiple of
// 4, never below 8.
size_t scale_channels(size_t base, double alpha);

// The five feature maps tapped from the encoder, at strides 2/4/8/16/32
// relative to the input.
struct EncoderFeatures {
    Tensor conv1, conv2, conv3, conv4, conv5;
};

// expand (1x1, relu6) -> depthwise 3x3 (relu6) -> project (1x1, linear),
// with a residual skip when stride is 1 and widths match. The expansion
// layer is omitted when the expansion factor is 1.
class InvertedResidual : public Module {
public:
    InvertedResidual(Rng& rng, size_t in_ch, size_t out_ch, size_t stride, size_t expand);
    Tensor forward(const Tensor& x) const;

private:
    std::unique_ptr<ConvBnAct> expand_;  // null when the factor is 1
    std::unique_ptr<ConvBnAct> depthwise_;
    std::unique_ptr<ConvBnAct> project_;
    bool use_skip_ = false;
};

// Inverted-residual feature extractor: a stride-2 stem plus seven stages of
// blocks, cut into five feature levels after the last block of each stride.
// The classifier-side 1x1 expansion head is not part of the extractor.
class Encoder : public Module {
public:
    Encoder(Rng& rng, double alpha);

    // image must be [N,3,H,W] with H and W multiples of 32.
    EncoderFeatures forward(const Tensor& image) const;

    // Channel widths of conv1..conv5.
    const std::array<size_t, 5>& feature_channels() const { return feature_channels_; }

private:
    std::unique_ptr<ConvBnAct> stem_;
    std::vector<std::unique_ptr<InvertedResidual>> blocks_;
    std::array<size_t, 5> cut_after_{};  // block index whose output is each feature level
    std::array<size_t, 5> feature_channels_{};
};

}  // namespace mscnet
