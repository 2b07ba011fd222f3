#include "mscnet/msce.hpp"

namespace mscnet {

namespace {

size_t half_width(size_t out_channels) {
    if (out_channels % 2 != 0) throw InvalidArgument("msce: out_channels must be even");
    return out_channels / 2;
}

}  // namespace

Msce::Msce(Rng& rng, size_t in_channels, size_t out_channels)
    : in_(in_channels),
      mid_(half_width(out_channels)),
      out_(out_channels),
      reduce_plain_(rng, in_, mid_, 1, 1, Act::kRelu),
      conv3_plain_(rng, mid_, mid_, 3, 1, Act::kRelu),
      reduce_multi_(rng, in_, mid_, 1, 1, Act::kRelu),
      branch3_(rng, mid_, mid_, 3),
      branch5_(rng, mid_, mid_, 5),
      branch7_(rng, mid_, mid_, 7),
      atten_fc_(rng, in_, out_, 1, 1, {0, 0}, 1, /*bias=*/true),
      fuse_reduce_(rng, 2 * mid_, out_, 1, 1, Act::kRelu),
      fuse_conv3_(rng, out_, out_, 3, 1, Act::kRelu) {
    register_child("reduce_plain", reduce_plain_);
    register_child("conv3_plain", conv3_plain_);
    register_child("reduce_multi", reduce_multi_);
    register_child("branch3", branch3_);
    register_child("branch5", branch5_);
    register_child("branch7", branch7_);
    register_child("atten_fc", atten_fc_);
    register_child("fuse_reduce", fuse_reduce_);
    register_child("fuse_conv3", fuse_conv3_);
}

Tensor Msce::channel_reweight(const Tensor& f) const {
    Tensor avg = atten_fc_.forward(global_avg_pool(f));
    Tensor max = atten_fc_.forward(global_max_pool(f));
    return sigmoid(add(avg, max));
}

Tensor Msce::forward(const Tensor& f) const {
    if (f.rank() != 4 || f.dim(1) != in_) {
        throw InvalidArgument("msce: expected " + std::to_string(in_) + " input channels, got " +
                              shape_str(f.shape()));
    }
    Tensor f1 = conv3_plain_.forward(reduce_plain_.forward(f));
    Tensor ft = reduce_multi_.forward(f);
    Tensor f2 = add(add(branch3_.forward(ft), branch5_.forward(ft)), branch7_.forward(ft));
    Tensor fused = fuse_conv3_.forward(fuse_reduce_.forward(concat_channels(f1, f2)));
    return mul(fused, channel_reweight(f));
}

Decoder::Decoder(Rng& rng, const std::array<size_t, 5>& encoder_channels, size_t width, UpsampleMode mode)
    : width_(width), mode_(mode) {
    // msce_[i] fuses the running decoder map with encoder level 4-i
    // (conv4 down to conv1), so its input carries the unprojected deep map
    // first time around and the uniform width afterwards.
    for (size_t i = 0; i < 4; ++i) {
        const size_t skip_ch = encoder_channels[3 - i];
        const size_t deep_ch = i == 0 ? encoder_channels[4] : width;
        project_[i] = std::make_unique<ConvBnAct>(rng, skip_ch, width, 1, 1, Act::kRelu);
        register_child("project" + std::to_string(i + 1), *project_[i]);
        msce_[i] = std::make_unique<Msce>(rng, deep_ch + width, width);
        register_child("msce" + std::to_string(i + 1), *msce_[i]);
    }
}

DecoderOutputs Decoder::forward(const EncoderFeatures& enc) const {
    const Tensor* skips[4] = {&enc.conv4, &enc.conv3, &enc.conv2, &enc.conv1};
    DecoderOutputs out;
    Tensor* levels[4] = {&out.d1, &out.d2, &out.d3, &out.d4};
    Tensor x = enc.conv5;
    for (size_t i = 0; i < 4; ++i) {
        Tensor fused = concat_channels(upsample2x(x, mode_), project_[i]->forward(*skips[i]));
        x = msce_[i]->forward(fused);
        *levels[i] = x;
    }
    return out;
}

}  // namespace mscnet
