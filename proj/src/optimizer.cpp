#include "mscnet/optimizer.hpp"

#include <cmath>
#include <string>

namespace mscnet {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg) {
    if (params.empty()) throw InvalidArgument("Adam: empty parameter list");
    if (!(cfg_.lr > real(0)) || !(cfg_.beta1 >= real(0) && cfg_.beta1 < real(1)) ||
        !(cfg_.beta2 >= real(0) && cfg_.beta2 < real(1)) || !(cfg_.eps > real(0)) ||
        !(cfg_.weight_decay >= real(0))) {
        throw InvalidArgument("Adam: hyperparameters out of range");
    }
    slots_.reserve(params.size());
    for (Tensor& p : params) {
        Slot s;
        s.param = p;
        s.m.assign(p.numel(), real(0));
        s.v.assign(p.numel(), real(0));
        slots_.push_back(std::move(s));
    }
}

void Adam::step(real lr) {
    if (!(lr >= real(0))) throw InvalidArgument("Adam::step: negative learning rate");
    for (size_t i = 0; i < slots_.size(); ++i) {
        if (!slots_[i].param.has_grad()) {
            throw StateError("Adam::step: parameter " + std::to_string(i) +
                             " has no gradient; run backward first");
        }
    }
    ++t_;
    const real bc1 = real(1) - std::pow(cfg_.beta1, (real)t_);
    const real bc2 = real(1) - std::pow(cfg_.beta2, (real)t_);
    for (Slot& s : slots_) {
        real* x = s.param.data();
        const real* g = s.param.grad();
        for (size_t i = 0; i < s.param.numel(); ++i) {
            real grad = g[i];
            if (!cfg_.decoupled_decay) grad += cfg_.weight_decay * x[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (real(1) - cfg_.beta1) * grad;
            s.v[i] = cfg_.beta2 * s.v[i] + (real(1) - cfg_.beta2) * grad * grad;
            const real mhat = s.m[i] / bc1;
            const real vhat = s.v[i] / bc2;
            real update = mhat / (std::sqrt(vhat) + cfg_.eps);
            if (cfg_.decoupled_decay) update += cfg_.weight_decay * x[i];
            x[i] -= lr * update;
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

real cosine_lr(size_t epoch, size_t total, real lr0) {
    if (total == 0 || epoch >= total) {
        throw InvalidArgument("cosine_lr: need 0 <= epoch < total");
    }
    constexpr real kPi = real(3.14159265358979323846);
    return lr0 * real(0.5) * (real(1) + std::cos(kPi * (real)epoch / (real)total));
}

}  // namespace mscnet
