#include "mscnet/backbone.hpp"

#include <cmath>

namespace mscnet {

size_t scale_channels(size_t base, double alpha) {
    const long long snapped = std::llround((double)base * alpha / 4.0) * 4;
    return (size_t)std::max(8LL, snapped);
}

InvertedResidual::InvertedResidual(Rng& rng, size_t in_ch, size_t out_ch, size_t stride, size_t expand) {
    if (stride != 1 && stride != 2) throw InvalidArgument("inverted residual: stride must be 1 or 2");
    const size_t hidden = in_ch * expand;
    if (expand != 1) {
        expand_ = std::make_unique<ConvBnAct>(rng, in_ch, hidden, 1, 1, Act::kRelu6);
        register_child("expand", *expand_);
    }
    depthwise_ = std::make_unique<ConvBnAct>(rng, hidden, hidden, 3, stride, Act::kRelu6, hidden);
    register_child("depthwise", *depthwise_);
    project_ = std::make_unique<ConvBnAct>(rng, hidden, out_ch, 1, 1, Act::kNone);
    register_child("project", *project_);
    use_skip_ = stride == 1 && in_ch == out_ch;
}

Tensor InvertedResidual::forward(const Tensor& x) const {
    Tensor h = expand_ ? expand_->forward(x) : x;
    h = project_->forward(depthwise_->forward(h));
    return use_skip_ ? add(h, x) : h;
}

namespace {

struct StageSpec {
    size_t expand, channels, repeats, stride;
};

// The standard inverted-residual stage table.
constexpr StageSpec kStages[] = {
    {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
    {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
};

// Feature levels are tapped after the last block of stages 1, 2, 3, 5, 7
// (1-based): the final block at each output stride.
constexpr size_t kCutStages[5] = {1, 2, 3, 5, 7};

}  // namespace

Encoder::Encoder(Rng& rng, double alpha) {
    const size_t stem_ch = scale_channels(32, alpha);
    stem_ = std::make_unique<ConvBnAct>(rng, 3, stem_ch, 3, 2, Act::kRelu6);
    register_child("stem", *stem_);

    size_t in_ch = stem_ch;
    size_t block_index = 0;
    size_t level = 0;
    for (size_t stage = 0; stage < std::size(kStages); ++stage) {
        const StageSpec& s = kStages[stage];
        const size_t out_ch = scale_channels(s.channels, alpha);
        for (size_t rep = 0; rep < s.repeats; ++rep) {
            const size_t stride = rep == 0 ? s.stride : 1;
            blocks_.push_back(std::make_unique<InvertedResidual>(rng, in_ch, out_ch, stride, s.expand));
            register_child("block" + std::to_string(block_index + 1), *blocks_.back());
            in_ch = out_ch;
            ++block_index;
        }
        if (level < 5 && stage + 1 == kCutStages[level]) {
            cut_after_[level] = block_index - 1;
            feature_channels_[level] = out_ch;
            ++level;
        }
    }
}

EncoderFeatures Encoder::forward(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw InvalidArgument("encoder: expected [N,3,H,W] input, got " + shape_str(image.shape()));
    }
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
        throw InvalidArgument("encoder: spatial extents must be multiples of 32, got " +
                              shape_str(image.shape()));
    }
    EncoderFeatures out;
    Tensor* levels[5] = {&out.conv1, &out.conv2, &out.conv3, &out.conv4, &out.conv5};
    Tensor x = stem_->forward(image);
    size_t level = 0;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i]->forward(x);
        if (level < 5 && i == cut_after_[level]) {
            *levels[level] = x;
            ++level;
        }
    }
    return out;
}

}  // namespace mscnet
