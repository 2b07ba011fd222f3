#include "mscnet/apfa.hpp"

namespace mscnet {

namespace {

size_t bottleneck_width(size_t channels, size_t reduction) {
    if (reduction == 0 || channels < reduction) {
        throw InvalidArgument("channel attention: channels (" + std::to_string(channels) +
                              ") must be at least the reduction ratio (" + std::to_string(reduction) + ")");
    }
    return channels / reduction;
}

}  // namespace

ChannelAttention::ChannelAttention(Rng& rng, size_t channels, size_t reduction)
    : fc1_(rng, channels, bottleneck_width(channels, reduction), 1, 1, {0, 0}, 1, /*bias=*/true),
      fc2_(rng, channels / reduction, channels, 1, 1, {0, 0}, 1, /*bias=*/true) {
    register_child("fc1", fc1_);
    register_child("fc2", fc2_);
}

Tensor ChannelAttention::forward(const Tensor& f) const {
    auto squeeze = [this](const Tensor& pooled) { return fc2_.forward(relu(fc1_.forward(pooled))); };
    Tensor gate = sigmoid(add(squeeze(global_avg_pool(f)), squeeze(global_max_pool(f))));
    return mul(f, gate);
}

SpatialAttention::SpatialAttention(Rng& rng)
    : conv_(rng, 2, 1, 3, 1, {1, 1}, 1, /*bias=*/true) {
    register_child("conv", conv_);
}

Tensor SpatialAttention::forward(const Tensor& f) const {
    Tensor pooled = concat_channels(channel_avg_pool(f), channel_max_pool(f));
    return mul(f, sigmoid(conv_.forward(pooled)));
}

FusePair::FusePair(Rng& rng, size_t width, UpsampleMode mode)
    : reduce_(rng, 2 * width, width, 1, 1, Act::kRelu), mode_(mode) {
    register_child("reduce", reduce_);
}

Tensor FusePair::forward(const Tensor& deep, const Tensor& shallow) const {
    if (deep.dim(1) != shallow.dim(1)) {
        throw InvalidArgument("fuse_pair: width mismatch, " + shape_str(deep.shape()) + " vs " +
                              shape_str(shallow.shape()));
    }
    if (shallow.dim(2) != 2 * deep.dim(2) || shallow.dim(3) != 2 * deep.dim(3)) {
        throw InvalidArgument("fuse_pair: shallow map must be exactly twice the deep resolution, got " +
                              shape_str(deep.shape()) + " vs " + shape_str(shallow.shape()));
    }
    return reduce_.forward(concat_channels(upsample2x(deep, mode_), shallow));
}

PyramidRow::PyramidRow(Rng& rng, size_t width, size_t reduction, size_t entries, UpsampleMode mode)
    : ca_(rng, width, reduction), sa_(rng) {
    register_child("ca", ca_);
    register_child("sa", sa_);
    for (size_t j = 0; j + 1 < entries; ++j) {
        fuses_.push_back(std::make_unique<FusePair>(rng, width, mode));
        register_child("fuse" + std::to_string(j + 1), *fuses_.back());
    }
}

std::vector<Tensor> PyramidRow::forward(std::vector<Tensor> row) const {
    if (row.size() != fuses_.size() + 1) {
        throw InvalidArgument("pyramid row: expected " + std::to_string(fuses_.size() + 1) +
                              " entries, got " + std::to_string(row.size()));
    }
    row.front() = ca_.forward(row.front());
    row.back() = sa_.forward(row.back());
    std::vector<Tensor> next;
    next.reserve(fuses_.size());
    for (size_t j = 0; j < fuses_.size(); ++j) next.push_back(fuses_[j]->forward(row[j], row[j + 1]));
    return next;
}

Apfa::Apfa(Rng& rng, size_t width, size_t ca_reduction, UpsampleMode mode)
    : row4_(rng, width, ca_reduction, 4, mode),
      row3_(rng, width, ca_reduction, 3, mode),
      row2_(rng, width, ca_reduction, 2, mode),
      head_(rng, width, 1, 3, 1, {1, 1}, 1, /*bias=*/true),
      mode_(mode) {
    register_child("p4", row4_);
    register_child("p3", row3_);
    register_child("p2", row2_);
    register_child("head", head_);
    // Temper the prediction head: at fan-in scale the fresh logits reach the
    // sigmoid tails, collapsing early training signal. The power-of-two
    // factor keeps the values f32-exact.
    head_.visit_state("", [](const std::string& name, const Tensor& t, bool) {
        if (name == "weight") {
            Tensor w = t;
            for (size_t i = 0; i < w.numel(); ++i) w[i] *= real(0.25);
        }
    });
}

Tensor Apfa::forward(const DecoderOutputs& d) const {
    std::vector<Tensor> row = {d.d1, d.d2, d.d3, d.d4};
    row = row4_.forward(std::move(row));
    row = row3_.forward(std::move(row));
    row = row2_.forward(std::move(row));
    return sigmoid(upsample2x(head_.forward(row.front()), mode_));
}

}  // namespace mscnet
