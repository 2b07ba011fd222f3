#include "mscnet/loss.hpp"

#include <cmath>

#include "mscnet/ops.hpp"

namespace mscnet {

namespace {

bool taping() { return Tape::current() != nullptr; }

void ensure_grad_buf(const std::shared_ptr<TensorData>& td) {
    if (td->grad.empty()) td->grad.assign(td->data.size(), real(0));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch, " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
    }
    if (a.numel() == 0) throw InvalidArgument(std::string(op) + ": empty input");
}

}  // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& target, real clamp_eps, bool sum_reduction) {
    require_same_shape(pred, target, "bce_loss");
    if (!(clamp_eps > real(0)) || !(clamp_eps < real(0.5))) {
        throw InvalidArgument("bce_loss: clamp_eps must lie in (0, 0.5)");
    }

    const size_t n = pred.numel();
    const real lo = clamp_eps, hi = real(1) - clamp_eps;
    const real norm = sum_reduction ? real(1) : real(1) / (real)n;

    const real* p = pred.data();
    const real* g = target.data();
    real acc = 0;
    for (size_t i = 0; i < n; ++i) {
        const real pc = std::min(std::max(p[i], lo), hi);
        acc -= g[i] * std::log(pc) + (real(1) - g[i]) * std::log(real(1) - pc);
    }
    Tensor out = Tensor::scalar(acc * norm);
    check_finite(out, "bce_loss");

    const bool need_p = pred.tracked(), need_g = target.tracked();
    if (taping() && (need_p || need_g)) {
        out.mark_on_tape();
        auto pp = pred.ptr();
        auto gp = target.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            if (need_p) ensure_grad_buf(pp);
            if (need_g) ensure_grad_buf(gp);
            const real gy = yp->grad[0] * norm;
            for (size_t i = 0; i < n; ++i) {
                const real pv = pp->data[i];
                const real gv = gp->data[i];
                const real pc = std::min(std::max(pv, lo), hi);
                // Inside the clamp window d/dp = (p - g) / (p (1-p)); at a
                // saturated clamp the loss is locally constant in p.
                if (need_p && pv >= lo && pv <= hi) {
                    pp->grad[i] += gy * (pc - gv) / (pc * (real(1) - pc));
                }
                if (need_g) {
                    gp->grad[i] += gy * std::log((real(1) - pc) / pc);
                }
            }
        });
    }
    return out;
}

Tensor iou_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "iou_loss");

    const size_t batch = pred.dim(0);
    const size_t per = pred.numel() / batch;
    const real* p = pred.data();
    const real* g = target.data();

    real acc = 0;
    for (size_t b = 0; b < batch; ++b) {
        real inter = 0, uni = 0;
        for (size_t i = b * per; i < (b + 1) * per; ++i) {
            const real pg = p[i] * g[i];
            inter += pg;
            uni += p[i] + g[i] - pg;
        }
        acc += real(1) - (inter + real(1)) / (uni + real(1));
    }
    Tensor out = Tensor::scalar(acc / (real)batch);
    check_finite(out, "iou_loss");

    const bool need_p = pred.tracked(), need_g = target.tracked();
    if (taping() && (need_p || need_g)) {
        out.mark_on_tape();
        auto pp = pred.ptr();
        auto gp = target.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            if (need_p) ensure_grad_buf(pp);
            if (need_g) ensure_grad_buf(gp);
            const real gy = yp->grad[0] / (real)batch;
            for (size_t b = 0; b < batch; ++b) {
                real inter = 0, uni = 0;
                for (size_t i = b * per; i < (b + 1) * per; ++i) {
                    const real pg = pp->data[i] * gp->data[i];
                    inter += pg;
                    uni += pp->data[i] + gp->data[i] - pg;
                }
                // L = 1 - (I+1)/(U+1) with dI/dp = g, dU/dp = 1-g (and the
                // mirrored expressions for g), via the quotient rule.
                const real inv_u = real(1) / (uni + real(1));
                const real ratio = (inter + real(1)) * inv_u * inv_u;
                for (size_t i = b * per; i < (b + 1) * per; ++i) {
                    const real pv = pp->data[i];
                    const real gv = gp->data[i];
                    if (need_p) pp->grad[i] += gy * ((real(1) - gv) * ratio - gv * inv_u);
                    if (need_g) gp->grad[i] += gy * ((real(1) - pv) * ratio - pv * inv_u);
                }
            }
        });
    }
    return out;
}

Tensor total_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    if (!(cfg.lambda >= real(0))) throw InvalidArgument("total_loss: lambda must be >= 0");
    Tensor bce = bce_loss(pred, target, cfg.clamp_eps, cfg.sum_reduction);
    return add(bce, scale(iou_loss(pred, target), cfg.lambda));
}

}  // namespace mscnet
