#pragma once

#include <array>
#include <memory>

#include "mscnet/backbone.hpp"
#include "mscnet/module.hpp"

namespace mscnet {

// Multi-scale context extraction. Two parallel reductions of the input feed
// (a) a plain 3x3 branch and (b) the sum of three factorized-convolution
// branches with kernel sizes 3, 5 and 7; the concatenated branches are fused
// by 1x1 + 3x3 convolutions and gated by a channel-reweighting vector pooled
// from the raw input. Spatial size is always preserved.
class Msce : public Module {
public:
    // mid width is fixed at out_channels / 2 so the two branches concatenate
    // back to exactly out_channels; out_channels must be even.
    Msce(Rng& rng, size_t in_channels, size_t out_channels);

    Tensor forward(const Tensor& f) const;

    // Pooled gate in (0,1), shape [N,out_channels,1,1]. One shared
    // fully-connected map (a 1x1 convolution) is applied to both the
    // average- and max-pooled vectors.
    Tensor channel_reweight(const Tensor& f) const;

    size_t in_channels() const { return in_; }
    size_t out_channels() const { return out_; }

private:
    size_t in_, mid_, out_;
    ConvBnAct reduce_plain_;    // 1x1 in->mid feeding the 3x3 branch
    ConvBnAct conv3_plain_;     // 3x3 mid->mid
    ConvBnAct reduce_multi_;    // 1x1 in->mid feeding the factorized branches
    AsymConvBlock branch3_, branch5_, branch7_;
    Conv2d atten_fc_;           // 1x1 in->out, with bias
    ConvBnAct fuse_reduce_;     // 1x1 (2*mid)->out
    ConvBnAct fuse_conv3_;      // 3x3 out->out
};

// Decoder: walk the encoder features deepest-first, at each step upsampling
// the running map, concatenating the width-projected skip feature, and
// passing the pair through one MSCE module. Yields four maps of uniform
// width at strides 16, 8, 4 and 2 (d1 deepest).
struct DecoderOutputs {
    Tensor d1, d2, d3, d4;
};

class Decoder : public Module {
public:
    Decoder(Rng& rng, const std::array<size_t, 5>& encoder_channels, size_t width, UpsampleMode mode);

    DecoderOutputs forward(const EncoderFeatures& enc) const;

    size_t width() const { return width_; }

private:
    size_t width_;
    UpsampleMode mode_;
    std::array<std::unique_ptr<ConvBnAct>, 4> project_;  // project_[i] feeds msce_[i]
    std::array<std::unique_ptr<Msce>, 4> msce_;
};

}  // namespace mscnet
