#include "mscnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace mscnet {

namespace {

constexpr real kGuard = real(1e-8);
constexpr real kBeta2 = real(0.3);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch, " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
    }
    if (a.numel() == 0) throw InvalidArgument(std::string(op) + ": empty input");
}

// Structural metrics need a single 2-D plane: [H,W] or [1,1,H,W].
struct Plane {
    const real* v;
    size_t h, w;
};

Plane single_plane(const Tensor& t, const char* op) {
    if (t.rank() == 2) return {t.data(), t.dim(0), t.dim(1)};
    if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1) return {t.data(), t.dim(2), t.dim(3)};
    throw InvalidArgument(std::string(op) + ": expected one [H,W] or [1,1,H,W] plane, got " +
                          shape_str(t.shape()));
}

// Per-threshold positive counts for the sweep t_k = k/255, k = 0..255.
// Since the cut points increase, each pixel is predicted positive for exactly
// the prefix of thresholds with t_k <= p, so one histogram pass replaces 256
// scans while matching the direct per-threshold comparison bit for bit.
struct SweepCounts {
    std::array<size_t, kNumThresholds> tp{};        // foreground pixels with p >= t_k
    std::array<size_t, kNumThresholds> pred_pos{};  // all pixels with p >= t_k
    size_t foreground = 0;
    size_t total = 0;
};

SweepCounts sweep_counts(const Tensor& pred, const Tensor& target) {
    std::array<real, kNumThresholds> cuts;
    for (size_t k = 0; k < kNumThresholds; ++k) cuts[k] = (real)k / real(255);

    // hist[c] = pixels positive for exactly the first c thresholds.
    std::array<size_t, kNumThresholds + 1> hist_all{}, hist_fg{};
    const real* p = pred.data();
    const real* g = target.data();
    const size_t n = pred.numel();
    SweepCounts c;
    c.total = n;
    for (size_t i = 0; i < n; ++i) {
        const size_t prefix = std::upper_bound(cuts.begin(), cuts.end(), p[i]) - cuts.begin();
        const bool fg = g[i] > real(0.5);
        ++hist_all[prefix];
        if (fg) {
            ++hist_fg[prefix];
            ++c.foreground;
        }
    }
    size_t run_all = 0, run_fg = 0;
    for (size_t k = kNumThresholds; k-- > 0;) {
        run_all += hist_all[k + 1];
        run_fg += hist_fg[k + 1];
        c.pred_pos[k] = run_all;
        c.tp[k] = run_fg;
    }
    return c;
}

struct RegionMoments {
    size_t n = 0;
    real mean_p = 0, mean_g = 0;
    real var_p = 0, var_g = 0, cov = 0;  // sample statistics (n-1), zero when n < 2
};

// Two-pass moments of a rectangular window [r0,r1) x [c0,c1) of both planes.
RegionMoments window_moments(const Plane& p, const Plane& g, size_t r0, size_t r1, size_t c0,
                             size_t c1) {
    RegionMoments m;
    m.n = (r1 - r0) * (c1 - c0);
    if (m.n == 0) return m;
    real sp = 0, sg = 0;
    for (size_t r = r0; r < r1; ++r) {
        for (size_t c = c0; c < c1; ++c) {
            sp += p.v[r * p.w + c];
            sg += g.v[r * g.w + c];
        }
    }
    m.mean_p = sp / (real)m.n;
    m.mean_g = sg / (real)m.n;
    if (m.n < 2) return m;
    real vp = 0, vg = 0, cov = 0;
    for (size_t r = r0; r < r1; ++r) {
        for (size_t c = c0; c < c1; ++c) {
            const real dp = p.v[r * p.w + c] - m.mean_p;
            const real dg = g.v[r * g.w + c] - m.mean_g;
            vp += dp * dp;
            vg += dg * dg;
            cov += dp * dg;
        }
    }
    m.var_p = vp / (real)(m.n - 1);
    m.var_g = vg / (real)(m.n - 1);
    m.cov = cov / (real)(m.n - 1);
    return m;
}

// Regional structural similarity of one quadrant pair.
real region_ssim(const RegionMoments& m) {
    const real alpha = real(4) * m.mean_p * m.mean_g * m.cov;
    const real beta =
        (m.mean_p * m.mean_p + m.mean_g * m.mean_g) * (m.var_p + m.var_g);
    // |alpha| <= beta, so beta == 0 forces alpha == 0: both maps are constant
    // over the quadrant, which counts as a perfect structural match.
    return beta != real(0) ? alpha / beta : real(1);
}

// Object-level similarity of one region: values x of the prediction (already
// complemented for background) where the mask selects, scored as
// 2*mean / (mean^2 + 1 + sample_std).
real object_score(const Plane& p, const Plane& g, bool foreground) {
    const size_t n = p.h * p.w;
    real sum = 0;
    size_t cnt = 0;
    for (size_t i = 0; i < n; ++i) {
        const bool fg = g.v[i] > real(0.5);
        if (fg != foreground) continue;
        sum += foreground ? p.v[i] : real(1) - p.v[i];
        ++cnt;
    }
    if (cnt == 0) return 0;
    const real x = sum / (real)cnt;
    real sd = 0;
    if (cnt > 1) {
        real acc = 0;
        for (size_t i = 0; i < n; ++i) {
            const bool fg = g.v[i] > real(0.5);
            if (fg != foreground) continue;
            const real d = (foreground ? p.v[i] : real(1) - p.v[i]) - x;
            acc += d * d;
        }
        sd = std::sqrt(acc / (real)(cnt - 1));
    }
    return real(2) * x / (x * x + real(1) + sd);
}

std::string format_real(real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", (double)v);
    return buf;
}

}  // namespace

real mae(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mae");
    const real* p = pred.data();
    const real* g = target.data();
    real acc = 0;
    for (size_t i = 0; i < pred.numel(); ++i) acc += std::abs(p[i] - g[i]);
    return acc / (real)pred.numel();
}

FMeasureCurve f_measure_curve(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "f_measure_curve");
    const SweepCounts c = sweep_counts(pred, target);

    FMeasureCurve out;
    out.empty_foreground = c.foreground == 0;
    for (size_t k = 0; k < kNumThresholds; ++k) {
        const real tp = (real)c.tp[k];
        const real prec = tp / ((real)c.pred_pos[k] + kGuard);
        const real rec = tp / ((real)c.foreground + kGuard);
        out.precision[k] = prec;
        out.recall[k] = rec;
        out.f[k] = (real(1) + kBeta2) * prec * rec / (kBeta2 * prec + rec + kGuard);
        if (out.f[k] > out.max_f) {
            out.max_f = out.f[k];
            out.max_index = k;
        }
    }
    return out;
}

real s_measure(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "s_measure");
    const Plane p = single_plane(pred, "s_measure");
    const Plane g = single_plane(target, "s_measure");
    const size_t n = p.h * p.w;

    size_t fg = 0;
    real pred_sum = 0;
    for (size_t i = 0; i < n; ++i) {
        if (g.v[i] > real(0.5)) ++fg;
        pred_sum += p.v[i];
    }
    const real pred_mean = pred_sum / (real)n;
    if (fg == 0) return real(1) - pred_mean;
    if (fg == n) return pred_mean;

    // Object term: foreground/background similarity mixed by foreground share.
    const real u = (real)fg / (real)n;
    const real s_object =
        u * object_score(p, g, true) + (real(1) - u) * object_score(p, g, false);

    // Region term: split both maps at the (1-based, rounded) foreground
    // centroid and mix the quadrant similarities by ground-truth area.
    real row_acc = 0, col_acc = 0;
    for (size_t r = 0; r < p.h; ++r) {
        for (size_t c = 0; c < p.w; ++c) {
            if (g.v[r * g.w + c] > real(0.5)) {
                row_acc += (real)(r + 1);
                col_acc += (real)(c + 1);
            }
        }
    }
    const size_t cy = (size_t)std::llround((double)(row_acc / (real)fg));
    const size_t cx = (size_t)std::llround((double)(col_acc / (real)fg));

    const real inv_total = real(1) / (real)n;
    const real w1 = (real)(cx * cy) * inv_total;
    const real w2 = (real)((p.w - cx) * cy) * inv_total;
    const real w3 = (real)(cx * (p.h - cy)) * inv_total;
    const real w4 = real(1) - (w1 + w2 + w3);
    const real s_region =
        ((w1 * region_ssim(window_moments(p, g, 0, cy, 0, cx)) +
          w2 * region_ssim(window_moments(p, g, 0, cy, cx, p.w))) +
         w3 * region_ssim(window_moments(p, g, cy, p.h, 0, cx))) +
        w4 * region_ssim(window_moments(p, g, cy, p.h, cx, p.w));

    return std::max(real(0.5) * s_object + real(0.5) * s_region, real(0));
}

real e_measure(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "e_measure");
    const Plane p = single_plane(pred, "e_measure");
    single_plane(target, "e_measure");
    const size_t n = p.h * p.w;

    const SweepCounts c = sweep_counts(pred, target);
    const real fg = (real)c.foreground;
    const real bg = (real)(n - c.foreground);

    real best = 0;
    for (size_t k = 0; k < kNumThresholds; ++k) {
        const real pp = (real)c.pred_pos[k];
        real score;
        if (c.foreground == 0) {
            score = ((real)n - pp) / (real)n;  // enhanced matrix is 1 - FM
        } else if (c.foreground == n) {
            score = pp / (real)n;  // enhanced matrix is FM
        } else {
            // Binary maps mean-centered take two values each, so the
            // alignment matrix is constant on the four confusion cells.
            const real tp = (real)c.tp[k];
            const real fp = pp - tp;
            const real fn = fg - tp;
            const real tn = bg - fp;
            const real mu_f = pp / (real)n;
            const real mu_g = fg / (real)n;
            const real df_pos = real(1) - mu_f, df_neg = -mu_f;
            const real dg_pos = real(1) - mu_g, dg_neg = -mu_g;
            auto enhanced = [](real a, real b) {
                const real den = a * a + b * b;
                const real align = den != real(0) ? real(2) * a * b / den : real(0);
                const real e = align + real(1);
                return e * e / real(4);
            };
            score = (tp * enhanced(dg_pos, df_pos) + fp * enhanced(dg_neg, df_pos) +
                     fn * enhanced(dg_pos, df_neg) + tn * enhanced(dg_neg, df_neg)) /
                    (real)n;
        }
        best = std::max(best, score);
    }
    return best;
}

MetricsReport evaluate_pair(const Tensor& pred, const Tensor& target) {
    MetricsReport r;
    r.mae = mae(pred, target);
    const FMeasureCurve curve = f_measure_curve(pred, target);
    r.max_f = curve.max_f;
    r.max_f_threshold = curve.max_threshold();
    r.precision.assign(curve.precision.begin(), curve.precision.end());
    r.recall.assign(curve.recall.begin(), curve.recall.end());
    r.empty_foreground = curve.empty_foreground;
    r.sm = s_measure(pred, target);
    r.em = e_measure(pred, target);
    return r;
}

MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw InvalidArgument("aggregate_reports: no reports");
    MetricsReport agg;
    agg.precision.assign(kNumThresholds, 0);
    agg.recall.assign(kNumThresholds, 0);
    const real inv = real(1) / (real)reports.size();
    for (const MetricsReport& r : reports) {
        if (r.precision.size() != kNumThresholds || r.recall.size() != kNumThresholds) {
            throw InvalidArgument("aggregate_reports: report lacks full threshold curves");
        }
        agg.mae += r.mae * inv;
        agg.sm += r.sm * inv;
        agg.em += r.em * inv;
        agg.empty_foreground = agg.empty_foreground || r.empty_foreground;
        for (size_t k = 0; k < kNumThresholds; ++k) {
            agg.precision[k] += r.precision[k] * inv;
            agg.recall[k] += r.recall[k] * inv;
        }
    }
    size_t arg = 0;
    for (size_t k = 0; k < kNumThresholds; ++k) {
        const real prec = agg.precision[k], rec = agg.recall[k];
        const real f = (real(1) + kBeta2) * prec * rec / (kBeta2 * prec + rec + kGuard);
        if (f > agg.max_f) {
            agg.max_f = f;
            arg = k;
        }
    }
    agg.max_f_threshold = (real)arg / real(255);
    return agg;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["mae"] = mae;
    j["maxF"] = max_f;
    j["maxF_threshold"] = max_f_threshold;
    j["sm"] = sm;
    j["em"] = em;
    j["precision"] = precision;
    j["recall"] = recall;
    j["empty_foreground"] = empty_foreground;
    return j.dump();
}

std::string MetricsReport::csv_header() { return "mae,maxF,maxF_threshold,sm,em"; }

std::string MetricsReport::csv_row() const {
    return format_real(mae) + "," + format_real(max_f) + "," + format_real(max_f_threshold) +
           "," + format_real(sm) + "," + format_real(em);
}

}  // namespace mscnet
