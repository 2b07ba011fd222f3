#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mscnet/apfa.hpp"
#include "mscnet/backbone.hpp"
#include "mscnet/msce.hpp"
#include "mscnet/weights.hpp"

namespace mscnet {

struct ModelConfig {
    double alpha = 1.0;
    size_t decoder_width = 96;
    size_t ca_reduction = 4;
    UpsampleMode upsample = UpsampleMode::kBilinear;

    // Full-width configuration.
    static ModelConfig full() { return {}; }
    // Quarter-width configuration for CPU-scale experiments and tests.
    static ModelConfig desk() {
        ModelConfig cfg;
        cfg.alpha = 0.25;
        cfg.decoder_width = 32;
        return cfg;
    }
};

// Encoder -> MSCE decoder -> pyramid aggregation -> saliency map in (0,1)
// at input resolution.
class MscNet : public Module {
public:
    MscNet(const ModelConfig& cfg, uint64_t seed);

    Tensor forward(const Tensor& image) const;

    const ModelConfig& config() const { return cfg_; }
    const Encoder& encoder() const { return *encoder_; }

private:
    ModelConfig cfg_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<Decoder> decoder_;
    std::unique_ptr<Apfa> apfa_;
};

// Learnable-parameter census, grouped by the first path component of each
// tensor name ("encoder", "decoder", "apfa"). Groups appear in first-seen
// traversal order; their counts sum to total.
struct ParamCensus {
    size_t total = 0;
    std::vector<std::pair<std::string, size_t>> by_prefix;
};

ParamCensus census_params(const Module& root);

}  // namespace mscnet
