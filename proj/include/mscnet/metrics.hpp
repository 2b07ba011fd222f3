#pragma once

#include <array>
#include <string>
#include <vector>

#include "mscnet/tensor.hpp"

namespace mscnet {

// Every threshold-swept metric uses the same 256 cut points t = k/255.
inline constexpr size_t kNumThresholds = 256;

struct FMeasureCurve {
    std::array<real, kNumThresholds> precision{};
    std::array<real, kNumThresholds> recall{};
    std::array<real, kNumThresholds> f{};
    real max_f = 0;
    size_t max_index = 0;  // smallest threshold index attaining max_f
    bool empty_foreground = false;

    real max_threshold() const { return real(max_index) / real(255); }
};

// Mean absolute error between two same-shaped maps in [0,1].
real mae(const Tensor& pred, const Tensor& target);

// Precision/recall/F over the 256 binarizations pred >= t against a binary
// target (foreground = value > 0.5). F uses beta^2 = 0.3; all ratios carry a
// 1e-8 guard. A target with no foreground sets empty_foreground and leaves
// recall pinned at 0 by the guard.
FMeasureCurve f_measure_curve(const Tensor& pred, const Tensor& target);

// Structure measure: 0.5 * object-level + 0.5 * region-level structural
// similarity against a binary target. Degenerate targets fall back to
// 1 - mean(pred) (all background) or mean(pred) (all foreground). Inputs are
// single-channel planes shaped [H,W] or [1,1,H,W].
real s_measure(const Tensor& pred, const Tensor& target);

// Enhanced-alignment measure: mean of the enhanced alignment matrix between a
// binarized prediction and the binary target, maximized over the 256
// thresholds. Same plane shapes and degenerate-target handling as s_measure.
real e_measure(const Tensor& pred, const Tensor& target);

// One evaluated prediction/target pair, or a dataset-level aggregate.
struct MetricsReport {
    real mae = 0;
    real max_f = 0;
    real max_f_threshold = 0;
    real sm = 0;
    real em = 0;
    std::vector<real> precision;  // kNumThresholds entries
    std::vector<real> recall;
    bool empty_foreground = false;

    std::string to_json() const;
    std::string csv_row() const;
    static std::string csv_header();
};

// Runs every metric on one prediction/target pair.
MetricsReport evaluate_pair(const Tensor& pred, const Tensor& target);

// Dataset aggregate: mae/sm/em and the precision/recall curves are averaged
// over the reports, then max-F is re-derived from the averaged curves (the
// usual dataset-level convention, so it is not the mean of per-image max-F).
MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports);

}  // namespace mscnet
