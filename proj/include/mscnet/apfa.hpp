#pragma once

#include <memory>
#include <vector>

#include "mscnet/module.hpp"
#include "mscnet/msce.hpp"

namespace mscnet {

// Gate from globally pooled statistics through a shared two-layer bottleneck
// (hidden width C / reduction), applied multiplicatively per channel.
class ChannelAttention : public Module {
public:
    ChannelAttention(Rng& rng, size_t channels, size_t reduction);
    Tensor forward(const Tensor& f) const;

private:
    Conv2d fc1_, fc2_;
};

// Gate from channel-pooled average/max planes through a 3x3 convolution,
// applied multiplicatively per pixel.
class SpatialAttention : public Module {
public:
    explicit SpatialAttention(Rng& rng);
    Tensor forward(const Tensor& f) const;

private:
    Conv2d conv_;
};

// Merges a deep map into the adjacent shallower one: upsample the deep map
// 2x, concatenate, reduce 2W -> W with a 1x1 conv + BN + ReLU.
class FusePair : public Module {
public:
    FusePair(Rng& rng, size_t width, UpsampleMode mode);
    Tensor forward(const Tensor& deep, const Tensor& shallow) const;

private:
    ConvBnAct reduce_;
    UpsampleMode mode_;
};

// One pyramid reduction step over `entries` maps ordered deepest to
// shallowest: channel attention on the deepest entry, spatial attention on
// the shallowest, then pairwise fusion down to entries-1 maps.
class PyramidRow : public Module {
public:
    PyramidRow(Rng& rng, size_t width, size_t reduction, size_t entries, UpsampleMode mode);
    std::vector<Tensor> forward(std::vector<Tensor> row) const;

private:
    ChannelAttention ca_;
    SpatialAttention sa_;
    std::vector<std::unique_ptr<FusePair>> fuses_;
};

// Inverted-pyramid aggregation of the four decoder maps: rows of size
// 4 -> 3 -> 2 -> 1, then a 3x3 head to one channel, a final 2x upsample to
// input resolution, and a sigmoid.
class Apfa : public Module {
public:
    Apfa(Rng& rng, size_t width, size_t ca_reduction, UpsampleMode mode);
    Tensor forward(const DecoderOutputs& d) const;

private:
    PyramidRow row4_, row3_, row2_;
    Conv2d head_;
    UpsampleMode mode_;
};

}  // namespace mscnet
