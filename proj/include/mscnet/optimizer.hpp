#pragma once

#include <vector>

#include "mscnet/tensor.hpp"

namespace mscnet {

struct AdamConfig {
    real lr = real(1e-4);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real weight_decay = real(5e-4);
    // Default decay is the classic L2 term added to the gradient; setting
    // this applies the decay directly to the weights instead (AdamW style).
    bool decoupled_decay = false;
};

// Adam with bias correction over a fixed parameter list. Moment buffers are
// owned here; parameters are updated in place through their shared storage.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    // One update from the parameters' current gradients. Every parameter
    // must have a populated gradient buffer.
    void step(real lr);
    void step() { step(cfg_.lr); }

    void zero_grad();
    size_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Slot {
        Tensor param;
        std::vector<real> m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    size_t t_ = 0;
};

// Cosine annealing: lr0 * 0.5 * (1 + cos(pi * epoch / total)), stepped once
// per epoch. Requires 0 <= epoch < total.
real cosine_lr(size_t epoch, size_t total, real lr0);

}  // namespace mscnet
