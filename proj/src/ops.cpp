#include "mscnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mscnet {

namespace {

bool taping() { return Tape::current() != nullptr; }

void ensure_grad_buf(const std::shared_ptr<TensorData>& td) {
    if (td->grad.empty()) td->grad.assign(td->data.size(), real(0));
}

void require_rank4(const Tensor& t, const char* op) {
    if (t.rank() != 4) {
        throw InvalidArgument(std::string(op) + ": expected rank-4 NCHW tensor, got " + shape_str(t.shape()));
    }
}

// ---------------------------------------------------------------------------
// conv2d

struct ConvDims {
    size_t N, Cin, H, W;
    size_t Cout, Cg, KH, KW;
    size_t OH, OW, groups;
    long long S, PH, PW;
};

// First output row index whose input row oh*S - P + k is >= 0.
long long conv_lo(long long p_minus_k, long long s) {
    return p_minus_k > 0 ? (p_minus_k + s - 1) / s : 0;
}

// One past the last output row index whose input row stays < limit.
long long conv_hi(long long last_valid, long long s, long long extent) {
    if (last_valid < 0) return 0;
    return std::min(extent, last_valid / s + 1);
}

void conv2d_forward_kernel(const real* x, const real* w, const real* b, real* y, const ConvDims& d) {
    const size_t cout_per_group = d.Cout / d.groups;
    for (size_t n = 0; n < d.N; ++n) {
        for (size_t co = 0; co < d.Cout; ++co) {
            real* yplane = y + (n * d.Cout + co) * d.OH * d.OW;
            if (b) {
                std::fill(yplane, yplane + d.OH * d.OW, b[co]);
            }
            const size_t ci0 = (co / cout_per_group) * d.Cg;
            for (size_t cg = 0; cg < d.Cg; ++cg) {
                const real* xplane = x + (n * d.Cin + ci0 + cg) * d.H * d.W;
                const real* wplane = w + (co * d.Cg + cg) * d.KH * d.KW;
                for (size_t kh = 0; kh < d.KH; ++kh) {
                    const long long oh_lo = conv_lo(d.PH - (long long)kh, d.S);
                    const long long oh_hi = conv_hi((long long)d.H - 1 + d.PH - (long long)kh, d.S, (long long)d.OH);
                    for (size_t kw = 0; kw < d.KW; ++kw) {
                        const real wv = wplane[kh * d.KW + kw];
                        const long long ow_lo = conv_lo(d.PW - (long long)kw, d.S);
                        const long long ow_hi = conv_hi((long long)d.W - 1 + d.PW - (long long)kw, d.S, (long long)d.OW);
                        for (long long oh = oh_lo; oh < oh_hi; ++oh) {
                            const long long ih = oh * d.S - d.PH + (long long)kh;
                            const long long base = ih * (long long)d.W - d.PW + (long long)kw;
                            real* yrow = yplane + (size_t)oh * d.OW;
                            for (long long ow = ow_lo; ow < ow_hi; ++ow) {
                                yrow[ow] += wv * xplane[base + ow * d.S];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Any of gx/gw/gb may be null to skip that gradient.
void conv2d_backward_kernel(const real* x, const real* w, const real* gy,
                            real* gx, real* gw, real* gb, const ConvDims& d) {
    const size_t cout_per_group = d.Cout / d.groups;
    for (size_t n = 0; n < d.N; ++n) {
        for (size_t co = 0; co < d.Cout; ++co) {
            const real* gyplane = gy + (n * d.Cout + co) * d.OH * d.OW;
            if (gb) {
                real acc = 0;
                for (size_t i = 0; i < d.OH * d.OW; ++i) acc += gyplane[i];
                gb[co] += acc;
            }
            const size_t ci0 = (co / cout_per_group) * d.Cg;
            for (size_t cg = 0; cg < d.Cg; ++cg) {
                const size_t ci = ci0 + cg;
                const real* xplane = x + (n * d.Cin + ci) * d.H * d.W;
                real* gxplane = gx ? gx + (n * d.Cin + ci) * d.H * d.W : nullptr;
                const real* wplane = w + (co * d.Cg + cg) * d.KH * d.KW;
                real* gwplane = gw ? gw + (co * d.Cg + cg) * d.KH * d.KW : nullptr;
                for (size_t kh = 0; kh < d.KH; ++kh) {
                    const long long oh_lo = conv_lo(d.PH - (long long)kh, d.S);
                    const long long oh_hi = conv_hi((long long)d.H - 1 + d.PH - (long long)kh, d.S, (long long)d.OH);
                    for (size_t kw = 0; kw < d.KW; ++kw) {
                        const long long ow_lo = conv_lo(d.PW - (long long)kw, d.S);
                        const long long ow_hi = conv_hi((long long)d.W - 1 + d.PW - (long long)kw, d.S, (long long)d.OW);
                        const real wv = wplane[kh * d.KW + kw];
                        real wacc = 0;
                        for (long long oh = oh_lo; oh < oh_hi; ++oh) {
                            const long long ih = oh * d.S - d.PH + (long long)kh;
                            const long long base = ih * (long long)d.W - d.PW + (long long)kw;
                            const real* gyrow = gyplane + (size_t)oh * d.OW;
                            if (gw) {
                                for (long long ow = ow_lo; ow < ow_hi; ++ow) {
                                    wacc += gyrow[ow] * xplane[base + ow * d.S];
                                }
                            }
                            if (gx) {
                                for (long long ow = ow_lo; ow < ow_hi; ++ow) {
                                    gxplane[base + ow * d.S] += wv * gyrow[ow];
                                }
                            }
                        }
                        if (gw) gwplane[kh * d.KW + kw] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              size_t stride, std::pair<size_t, size_t> padding, size_t groups) {
    require_rank4(input, "conv2d");
    require_rank4(weight, "conv2d");
    if (stride == 0) throw InvalidArgument("conv2d: stride must be >= 1");
    if (groups == 0) throw InvalidArgument("conv2d: groups must be >= 1");

    ConvDims d;
    d.N = input.dim(0);
    d.Cin = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.Cout = weight.dim(0);
    d.Cg = weight.dim(1);
    d.KH = weight.dim(2);
    d.KW = weight.dim(3);
    d.S = (long long)stride;
    d.PH = (long long)padding.first;
    d.PW = (long long)padding.second;
    d.groups = groups;

    if (d.Cin % groups != 0 || d.Cout % groups != 0) {
        throw InvalidArgument("conv2d: channels not divisible by groups");
    }
    if (d.Cg != d.Cin / groups) {
        throw InvalidArgument("conv2d: weight " + shape_str(weight.shape()) + " does not match input " +
                              shape_str(input.shape()) + " with groups=" + std::to_string(groups));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.Cout)) {
        throw InvalidArgument("conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout");
    }
    const long long oh = ((long long)d.H + 2 * d.PH - (long long)d.KH) / d.S + 1;
    const long long ow = ((long long)d.W + 2 * d.PW - (long long)d.KW) / d.S + 1;
    if ((long long)d.H + 2 * d.PH < (long long)d.KH || (long long)d.W + 2 * d.PW < (long long)d.KW ||
        oh < 1 || ow < 1) {
        throw InvalidArgument("conv2d: zero-size output for input " + shape_str(input.shape()) +
                              ", kernel " + shape_str(weight.shape()));
    }
    d.OH = (size_t)oh;
    d.OW = (size_t)ow;

    Tensor out(Shape{d.N, d.Cout, d.OH, d.OW});
    conv2d_forward_kernel(input.data(), weight.data(), bias.defined() ? bias.data() : nullptr,
                          out.data(), d);
    check_finite(out, "conv2d");

    const bool need_gx = input.tracked();
    const bool need_gw = weight.tracked();
    const bool need_gb = bias.defined() && bias.tracked();
    if (taping() && (need_gx || need_gw || need_gb)) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto wp = weight.ptr();
        auto bp = bias.defined() ? bias.ptr() : nullptr;
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            if (need_gx) ensure_grad_buf(xp);
            if (need_gw) ensure_grad_buf(wp);
            if (need_gb) ensure_grad_buf(bp);
            conv2d_backward_kernel(xp->data.data(), wp->data.data(), yp->grad.data(),
                                   need_gx ? xp->grad.data() : nullptr,
                                   need_gw ? wp->grad.data() : nullptr,
                                   need_gb ? bp->grad.data() : nullptr, d);
        });
    }
    return out;
}

Tensor asym_conv(const Tensor& input, const Tensor& w_vertical, const Tensor& w_horizontal) {
    require_rank4(w_vertical, "asym_conv");
    require_rank4(w_horizontal, "asym_conv");
    const size_t k = w_vertical.dim(2);
    if (w_vertical.dim(3) != 1 || w_horizontal.dim(2) != 1 || w_horizontal.dim(3) != k) {
        throw InvalidArgument("asym_conv: expected factor kernels [C2,C1,k,1] and [C3,C2,1,k], got " +
                              shape_str(w_vertical.shape()) + " and " + shape_str(w_horizontal.shape()));
    }
    if (k % 2 == 0) throw InvalidArgument("asym_conv: kernel size must be odd, got " + std::to_string(k));
    Tensor mid = conv2d(input, w_vertical, Tensor(), 1, {k / 2, 0});
    return conv2d(mid, w_horizontal, Tensor(), 1, {0, k / 2});
}

// ---------------------------------------------------------------------------
// batchnorm

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   real momentum, real eps) {
    require_rank4(input, "batchnorm2d");
    const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    auto check_c = [&](const Tensor& t, const char* what) {
        if (t.rank() != 1 || t.dim(0) != C) {
            throw InvalidArgument(std::string("batchnorm2d: ") + what + " shape " + shape_str(t.shape()) +
                                  " does not match C=" + std::to_string(C));
        }
    };
    check_c(gamma, "gamma");
    check_c(beta, "beta");
    check_c(running_mean, "running_mean");
    check_c(running_var, "running_var");

    const size_t m = N * H * W;
    const size_t plane = H * W;
    std::vector<real> mean_c(C), invstd_c(C);

    if (training) {
        for (size_t c = 0; c < C; ++c) {
            real s = 0;
            for (size_t n = 0; n < N; ++n) {
                const real* p = input.data() + (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            const real mu = s / (real)m;
            real ss = 0;
            for (size_t n = 0; n < N; ++n) {
                const real* p = input.data() + (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const real dv = p[i] - mu;
                    ss += dv * dv;
                }
            }
            const real var = ss / (real)m;
            mean_c[c] = mu;
            invstd_c[c] = real(1) / std::sqrt(var + eps);
            const real unbiased = m > 1 ? var * (real)m / (real)(m - 1) : var;
            running_mean[c] = (real(1) - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (real(1) - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean_c[c] = running_mean[c];
            invstd_c[c] = real(1) / std::sqrt(running_var[c] + eps);
        }
    }

    Tensor out(input.shape());
    // xhat is saved for backward (both the input grad and the gamma grad need it).
    auto xhat = std::make_shared<std::vector<real>>(input.numel());
    for (size_t n = 0; n < N; ++n) {
        for (size_t c = 0; c < C; ++c) {
            const real* p = input.data() + (n * C + c) * plane;
            real* q = out.data() + (n * C + c) * plane;
            real* xh = xhat->data() + (n * C + c) * plane;
            const real mu = mean_c[c], is = invstd_c[c], g = gamma[c], b = beta[c];
            for (size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                q[i] = g * xh[i] + b;
            }
        }
    }
    check_finite(out, "batchnorm2d");

    const bool need_gx = input.tracked();
    const bool need_gg = gamma.tracked();
    const bool need_gb = beta.tracked();
    if (taping() && (need_gx || need_gg || need_gb)) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto gp = gamma.ptr();
        auto bp = beta.ptr();
        auto yp = out.ptr();
        auto invstd = std::make_shared<std::vector<real>>(invstd_c);
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            if (need_gx) ensure_grad_buf(xp);
            if (need_gg) ensure_grad_buf(gp);
            if (need_gb) ensure_grad_buf(bp);
            const real* gy = yp->grad.data();
            for (size_t c = 0; c < C; ++c) {
                real sum_gy = 0, sum_gy_xh = 0;
                for (size_t n = 0; n < N; ++n) {
                    const size_t base = (n * C + c) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        sum_gy += gy[base + i];
                        sum_gy_xh += gy[base + i] * (*xhat)[base + i];
                    }
                }
                if (need_gg) gp->grad[c] += sum_gy_xh;
                if (need_gb) bp->grad[c] += sum_gy;
                if (need_gx) {
                    const real g = gp->data[c];
                    const real is = (*invstd)[c];
                    if (training) {
                        const real mg = sum_gy / (real)m;
                        const real mgx = sum_gy_xh / (real)m;
                        for (size_t n = 0; n < N; ++n) {
                            const size_t base = (n * C + c) * plane;
                            for (size_t i = 0; i < plane; ++i) {
                                xp->grad[base + i] +=
                                    g * is * (gy[base + i] - mg - (*xhat)[base + i] * mgx);
                            }
                        }
                    } else {
                        for (size_t n = 0; n < N; ++n) {
                            const size_t base = (n * C + c) * plane;
                            for (size_t i = 0; i < plane; ++i) {
                                xp->grad[base + i] += g * is * gy[base + i];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd bwd_factor_from_xy) {
    Tensor y(x.shape());
    const real* xd = x.data();
    real* yd = y.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) yd[i] = fwd(xd[i]);
    check_finite(y, name);
    if (taping() && x.tracked()) {
        y.mark_on_tape();
        auto xp = x.ptr();
        auto yp = y.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t i = 0; i < n; ++i) {
                xp->grad[i] += yp->grad[i] * bwd_factor_from_xy(xp->data[i], yp->data[i]);
            }
        });
    }
    return y;
}

}  // namespace

Tensor relu(const Tensor& input) {
    return unary_op(
        // std::max keeps NaN (comparison is false), so a poisoned activation
        // reaches the loss instead of silently zeroing out.
        input, "relu", [](real v) { return std::max(v, real(0)); },
        [](real x, real) { return x > real(0) ? real(1) : real(0); });
}

Tensor relu6(const Tensor& input) {
    return unary_op(
        input, "relu6", [](real v) { return std::min(std::max(v, real(0)), real(6)); },
        [](real x, real) { return (x > real(0) && x < real(6)) ? real(1) : real(0); });
}

Tensor sigmoid(const Tensor& input) {
    return unary_op(
        input, "sigmoid", [](real v) { return real(1) / (real(1) + std::exp(-v)); },
        [](real, real y) { return y * (real(1) - y); });
}

// ---------------------------------------------------------------------------
// pooling

Tensor global_avg_pool(const Tensor& input) {
    require_rank4(input, "global_avg_pool");
    const size_t N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor out(Shape{N, C, 1, 1});
    for (size_t nc = 0; nc < N * C; ++nc) {
        const real* p = input.data() + nc * plane;
        real s = 0;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        out[nc] = s / (real)plane;
    }
    check_finite(out, "global_avg_pool");
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t nc = 0; nc < N * C; ++nc) {
                const real g = yp->grad[nc] / (real)plane;
                real* gx = xp->grad.data() + nc * plane;
                for (size_t i = 0; i < plane; ++i) gx[i] += g;
            }
        });
    }
    return out;
}

Tensor global_max_pool(const Tensor& input) {
    require_rank4(input, "global_max_pool");
    const size_t N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor out(Shape{N, C, 1, 1});
    auto argmax = std::make_shared<std::vector<size_t>>(N * C);
    for (size_t nc = 0; nc < N * C; ++nc) {
        const real* p = input.data() + nc * plane;
        size_t best = 0;
        for (size_t i = 1; i < plane; ++i) {
            if (p[i] > p[best]) best = i;
        }
        (*argmax)[nc] = best;
        out[nc] = p[best];
    }
    check_finite(out, "global_max_pool");
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t nc = 0; nc < N * C; ++nc) {
                xp->grad[nc * plane + (*argmax)[nc]] += yp->grad[nc];
            }
        });
    }
    return out;
}

Tensor channel_avg_pool(const Tensor& input) {
    require_rank4(input, "channel_avg_pool");
    const size_t N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor out(Shape{N, 1, input.dim(2), input.dim(3)});
    for (size_t n = 0; n < N; ++n) {
        real* q = out.data() + n * plane;
        std::fill(q, q + plane, real(0));
        for (size_t c = 0; c < C; ++c) {
            const real* p = input.data() + (n * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) q[i] += p[i];
        }
        for (size_t i = 0; i < plane; ++i) q[i] /= (real)C;
    }
    check_finite(out, "channel_avg_pool");
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t n = 0; n < N; ++n) {
                const real* gy = yp->grad.data() + n * plane;
                for (size_t c = 0; c < C; ++c) {
                    real* gx = xp->grad.data() + (n * C + c) * plane;
                    for (size_t i = 0; i < plane; ++i) gx[i] += gy[i] / (real)C;
                }
            }
        });
    }
    return out;
}

Tensor channel_max_pool(const Tensor& input) {
    require_rank4(input, "channel_max_pool");
    const size_t N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor out(Shape{N, 1, input.dim(2), input.dim(3)});
    auto argmax = std::make_shared<std::vector<size_t>>(N * plane);
    for (size_t n = 0; n < N; ++n) {
        for (size_t i = 0; i < plane; ++i) {
            size_t best = 0;
            real bv = input.data()[(n * C) * plane + i];
            for (size_t c = 1; c < C; ++c) {
                const real v = input.data()[(n * C + c) * plane + i];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            (*argmax)[n * plane + i] = best;
            out.data()[n * plane + i] = bv;
        }
    }
    check_finite(out, "channel_max_pool");
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t n = 0; n < N; ++n) {
                for (size_t i = 0; i < plane; ++i) {
                    const size_t c = (*argmax)[n * plane + i];
                    xp->grad[(n * C + c) * plane + i] += yp->grad[n * plane + i];
                }
            }
        });
    }
    return out;
}

namespace {

Tensor window_pool(const Tensor& input, size_t window, size_t stride, bool is_max, const char* name) {
    require_rank4(input, name);
    if (window == 0 || stride == 0) throw InvalidArgument(std::string(name) + ": window and stride must be >= 1");
    const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (window > H || window > W) {
        throw InvalidArgument(std::string(name) + ": window " + std::to_string(window) +
                              " larger than input " + shape_str(input.shape()));
    }
    const size_t OH = (H - window) / stride + 1;
    const size_t OW = (W - window) / stride + 1;
    Tensor out(Shape{N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<size_t>>(is_max ? out.numel() : 0);
    for (size_t nc = 0; nc < N * C; ++nc) {
        const real* p = input.data() + nc * H * W;
        real* q = out.data() + nc * OH * OW;
        for (size_t oh = 0; oh < OH; ++oh) {
            for (size_t ow = 0; ow < OW; ++ow) {
                const size_t h0 = oh * stride, w0 = ow * stride;
                if (is_max) {
                    size_t best = h0 * W + w0;
                    for (size_t dh = 0; dh < window; ++dh) {
                        for (size_t dw = 0; dw < window; ++dw) {
                            const size_t idx = (h0 + dh) * W + (w0 + dw);
                            if (p[idx] > p[best]) best = idx;
                        }
                    }
                    q[oh * OW + ow] = p[best];
                    (*argmax)[nc * OH * OW + oh * OW + ow] = best;
                } else {
                    real s = 0;
                    for (size_t dh = 0; dh < window; ++dh) {
                        for (size_t dw = 0; dw < window; ++dw) s += p[(h0 + dh) * W + (w0 + dw)];
                    }
                    q[oh * OW + ow] = s / (real)(window * window);
                }
            }
        }
    }
    check_finite(out, name);
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t nc = 0; nc < N * C; ++nc) {
                real* gx = xp->grad.data() + nc * H * W;
                const real* gy = yp->grad.data() + nc * OH * OW;
                for (size_t oh = 0; oh < OH; ++oh) {
                    for (size_t ow = 0; ow < OW; ++ow) {
                        const real g = gy[oh * OW + ow];
                        if (is_max) {
                            gx[(*argmax)[nc * OH * OW + oh * OW + ow]] += g;
                        } else {
                            const real gshare = g / (real)(window * window);
                            const size_t h0 = oh * stride, w0 = ow * stride;
                            for (size_t dh = 0; dh < window; ++dh) {
                                for (size_t dw = 0; dw < window; ++dw) {
                                    gx[(h0 + dh) * W + (w0 + dw)] += gshare;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor max_pool2d(const Tensor& input, size_t window, size_t stride) {
    return window_pool(input, window, stride, true, "max_pool2d");
}

Tensor avg_pool2d(const Tensor& input, size_t window, size_t stride) {
    return window_pool(input, window, stride, false, "avg_pool2d");
}

// ---------------------------------------------------------------------------
// upsampling

Tensor upsample2x(const Tensor& input, UpsampleMode mode) {
    require_rank4(input, "upsample2x");
    const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const size_t OH = 2 * H, OW = 2 * W;
    Tensor out(Shape{N, C, OH, OW});

    if (mode == UpsampleMode::kNearest) {
        for (size_t nc = 0; nc < N * C; ++nc) {
            const real* p = input.data() + nc * H * W;
            real* q = out.data() + nc * OH * OW;
            for (size_t oh = 0; oh < OH; ++oh) {
                const real* prow = p + (oh / 2) * W;
                real* qrow = q + oh * OW;
                for (size_t ow = 0; ow < OW; ++ow) qrow[ow] = prow[ow / 2];
            }
        }
        check_finite(out, "upsample2x");
        if (taping() && input.tracked()) {
            out.mark_on_tape();
            auto xp = input.ptr();
            auto yp = out.ptr();
            Tape::current()->record([=] {
                if (yp->grad.empty()) return;
                ensure_grad_buf(xp);
                for (size_t nc = 0; nc < N * C; ++nc) {
                    real* gx = xp->grad.data() + nc * H * W;
                    const real* gy = yp->grad.data() + nc * OH * OW;
                    for (size_t oh = 0; oh < OH; ++oh) {
                        for (size_t ow = 0; ow < OW; ++ow) {
                            gx[(oh / 2) * W + ow / 2] += gy[oh * OW + ow];
                        }
                    }
                }
            });
        }
        return out;
    }

    // Bilinear, align-corners=false: source coordinate (o + 0.5)/2 - 0.5 with
    // clamped neighbor indices, which preserves constants at the borders.
    struct Lerp {
        size_t i0, i1;
        real t;
    };
    auto make_lerp = [](size_t o, size_t extent) {
        const real src = ((real)o + real(0.5)) / real(2) - real(0.5);
        real f = std::floor(src);
        Lerp l;
        l.t = src - f;
        const long long i0 = (long long)f;
        l.i0 = (size_t)std::clamp(i0, 0LL, (long long)extent - 1);
        l.i1 = (size_t)std::clamp(i0 + 1, 0LL, (long long)extent - 1);
        return l;
    };
    std::vector<Lerp> hl(OH), wl(OW);
    for (size_t oh = 0; oh < OH; ++oh) hl[oh] = make_lerp(oh, H);
    for (size_t ow = 0; ow < OW; ++ow) wl[ow] = make_lerp(ow, W);

    for (size_t nc = 0; nc < N * C; ++nc) {
        const real* p = input.data() + nc * H * W;
        real* q = out.data() + nc * OH * OW;
        for (size_t oh = 0; oh < OH; ++oh) {
            const Lerp& a = hl[oh];
            for (size_t ow = 0; ow < OW; ++ow) {
                const Lerp& b = wl[ow];
                const real v00 = p[a.i0 * W + b.i0], v01 = p[a.i0 * W + b.i1];
                const real v10 = p[a.i1 * W + b.i0], v11 = p[a.i1 * W + b.i1];
                q[oh * OW + ow] = (real(1) - a.t) * ((real(1) - b.t) * v00 + b.t * v01) +
                                  a.t * ((real(1) - b.t) * v10 + b.t * v11);
            }
        }
    }
    check_finite(out, "upsample2x");
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        auto hlp = std::make_shared<std::vector<Lerp>>(hl);
        auto wlp = std::make_shared<std::vector<Lerp>>(wl);
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            for (size_t nc = 0; nc < N * C; ++nc) {
                real* gx = xp->grad.data() + nc * H * W;
                const real* gy = yp->grad.data() + nc * OH * OW;
                for (size_t oh = 0; oh < OH; ++oh) {
                    const Lerp& a = (*hlp)[oh];
                    for (size_t ow = 0; ow < OW; ++ow) {
                        const Lerp& b = (*wlp)[ow];
                        const real g = gy[oh * OW + ow];
                        gx[a.i0 * W + b.i0] += (real(1) - a.t) * (real(1) - b.t) * g;
                        gx[a.i0 * W + b.i1] += (real(1) - a.t) * b.t * g;
                        gx[a.i1 * W + b.i0] += a.t * (real(1) - b.t) * g;
                        gx[a.i1 * W + b.i1] += a.t * b.t * g;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat / elementwise

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank4(a, "concat_channels");
    require_rank4(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw InvalidArgument("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
    }
    const size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), plane = a.dim(2) * a.dim(3);
    Tensor out(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
    for (size_t n = 0; n < N; ++n) {
        std::copy(a.data() + n * Ca * plane, a.data() + (n + 1) * Ca * plane,
                  out.data() + n * (Ca + Cb) * plane);
        std::copy(b.data() + n * Cb * plane, b.data() + (n + 1) * Cb * plane,
                  out.data() + (n * (Ca + Cb) + Ca) * plane);
    }
    const bool ga = a.tracked(), gb = b.tracked();
    if (taping() && (ga || gb)) {
        out.mark_on_tape();
        auto ap = a.ptr();
        auto bp = b.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            if (ga) ensure_grad_buf(ap);
            if (gb) ensure_grad_buf(bp);
            for (size_t n = 0; n < N; ++n) {
                const real* gy = yp->grad.data() + n * (Ca + Cb) * plane;
                if (ga) {
                    real* g = ap->grad.data() + n * Ca * plane;
                    for (size_t i = 0; i < Ca * plane; ++i) g[i] += gy[i];
                }
                if (gb) {
                    real* g = bp->grad.data() + n * Cb * plane;
                    for (size_t i = 0; i < Cb * plane; ++i) g[i] += gy[Ca * plane + i];
                }
            }
        });
    }
    return out;
}

namespace {

enum class Broadcast { kExact, kChannelVec, kSpatialMap };

// Returns the pattern by which `small` broadcasts against `big`.
Broadcast classify_broadcast(const Shape& big, const Shape& small, const char* op) {
    if (big == small) return Broadcast::kExact;
    if (big.size() == 4 && small.size() == 4 && big[0] == small[0]) {
        if (small[1] == big[1] && small[2] == 1 && small[3] == 1) return Broadcast::kChannelVec;
        if (small[1] == 1 && small[2] == big[2] && small[3] == big[3]) return Broadcast::kSpatialMap;
    }
    throw InvalidArgument(std::string(op) + ": incompatible shapes " + shape_str(big) + " and " +
                          shape_str(small));
}

// Index of the broadcast operand's element feeding big-position (flat over NCHW).
struct BroadcastIndex {
    Broadcast pattern;
    size_t C, plane;
    size_t operator()(size_t n, size_t c, size_t i) const {
        switch (pattern) {
            case Broadcast::kExact: return (n * C + c) * plane + i;
            case Broadcast::kChannelVec: return n * C + c;
            default: return n * plane + i;  // kSpatialMap
        }
    }
};

template <bool IsMul>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, const char* name) {
    // Orient so `big` carries the output shape.
    const bool a_big = a.numel() >= b.numel();
    const Tensor& big = a_big ? a : b;
    const Tensor& small = a_big ? b : a;
    const Broadcast pattern = classify_broadcast(big.shape(), small.shape(), name);

    Tensor out(big.shape());
    size_t N = 1, C = 1, plane = big.numel();
    if (big.rank() == 4) {
        N = big.dim(0);
        C = big.dim(1);
        plane = big.dim(2) * big.dim(3);
    }
    BroadcastIndex sidx{pattern, C, plane};

    const real* pb = big.data();
    const real* ps = small.data();
    real* q = out.data();
    for (size_t n = 0; n < N; ++n) {
        for (size_t c = 0; c < C; ++c) {
            const size_t base = (n * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
                const real sv = ps[sidx(n, c, i)];
                q[base + i] = IsMul ? pb[base + i] * sv : pb[base + i] + sv;
            }
        }
    }
    check_finite(out, name);

    const bool need_big = big.tracked(), need_small = small.tracked();
    if (taping() && (need_big || need_small)) {
        out.mark_on_tape();
        auto bigp = big.ptr();
        auto smallp = small.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            if (need_big) ensure_grad_buf(bigp);
            if (need_small) ensure_grad_buf(smallp);
            const real* gy = yp->grad.data();
            for (size_t n = 0; n < N; ++n) {
                for (size_t c = 0; c < C; ++c) {
                    const size_t base = (n * C + c) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        const size_t si = sidx(n, c, i);
                        const real g = gy[base + i];
                        if (IsMul) {
                            if (need_big) bigp->grad[base + i] += g * smallp->data[si];
                            if (need_small) smallp->grad[si] += g * bigp->data[base + i];
                        } else {
                            if (need_big) bigp->grad[base + i] += g;
                            if (need_small) smallp->grad[si] += g;
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast<false>(a, b, "add"); }

Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast<true>(a, b, "mul"); }

Tensor scale(const Tensor& input, real factor) {
    return unary_op(
        input, "scale", [factor](real v) { return factor * v; },
        [factor](real, real) { return factor; });
}

Tensor sum(const Tensor& input) {
    real s = 0;
    for (real v : input.values()) s += v;
    Tensor out = Tensor::scalar(s);
    check_finite(out, "sum");
    if (taping() && input.tracked()) {
        out.mark_on_tape();
        auto xp = input.ptr();
        auto yp = out.ptr();
        Tape::current()->record([=] {
            if (yp->grad.empty()) return;
            ensure_grad_buf(xp);
            const real g = yp->grad[0];
            for (real& gv : xp->grad) gv += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& input) { return scale(sum(input), real(1) / (real)input.numel()); }

}  // namespace mscnet
