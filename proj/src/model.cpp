#include "mscnet/model.hpp"

namespace mscnet {

MscNet::MscNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    // Each component initializes from its own forked stream, so adding layers
    // to one component cannot shift another's initial weights.
    Rng enc_rng = rng.fork();
    Rng dec_rng = rng.fork();
    Rng apfa_rng = rng.fork();
    encoder_ = std::make_unique<Encoder>(enc_rng, cfg.alpha);
    decoder_ = std::make_unique<Decoder>(dec_rng, encoder_->feature_channels(), cfg.decoder_width,
                                         cfg.upsample);
    apfa_ = std::make_unique<Apfa>(apfa_rng, cfg.decoder_width, cfg.ca_reduction, cfg.upsample);
    register_child("encoder", *encoder_);
    register_child("decoder", *decoder_);
    register_child("apfa", *apfa_);
}

Tensor MscNet::forward(const Tensor& image) const {
    return apfa_->forward(decoder_->forward(encoder_->forward(image)));
}

ParamCensus census_params(const Module& root) {
    ParamCensus census;
    root.visit_state("", [&](const std::string& name, const Tensor& t, bool learnable) {
        if (!learnable) return;
        census.total += t.numel();
        const std::string prefix = name.substr(0, name.find('.'));
        for (auto& [p, count] : census.by_prefix) {
            if (p == prefix) {
                count += t.numel();
                return;
            }
        }
        census.by_prefix.emplace_back(prefix, t.numel());
    });
    return census;
}

}  // namespace mscnet
