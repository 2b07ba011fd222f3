#include "mscnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mscnet {

std::string GradCheckResult::describe() const {
    std::ostringstream os;
    os << "max_rel_err=" << max_rel_err << " coords=" << coords_checked;
    if (!worst_tensor.empty()) {
        os << " worst=" << worst_tensor << "[" << worst_index << "]"
           << " analytic=" << worst_analytic << " numeric=" << worst_numeric;
    }
    return os.str();
}

GradCheckResult gradcheck(const std::function<Tensor()>& fn,
                          const std::vector<std::pair<std::string, Tensor>>& wrt,
                          const GradCheckOptions& opts) {
    if (wrt.empty()) throw InvalidArgument("gradcheck: no tensors to check");

    // Analytic pass: one taped forward/backward.
    for (const auto& [name, t] : wrt) {
        (void)name;
        Tensor(t).set_requires_grad(true).zero_grad();
    }
    {
        TapeScope scope;
        Tensor loss = fn();
        if (loss.numel() != 1) {
            throw InvalidArgument("gradcheck: fn must return a scalar, got " + shape_str(loss.shape()));
        }
        backward(loss);
    }

    GradCheckResult result;
    Rng rng(opts.seed);
    NoGradGuard no_grad;  // finite-difference evaluations stay off any tape

    for (const auto& [name, t] : wrt) {
        Tensor tensor = t;  // shared storage; mutating coordinates is intended
        const size_t n = tensor.numel();

        std::vector<size_t> coords;
        if (opts.max_coords_per_tensor == 0 || opts.max_coords_per_tensor >= n) {
            coords.resize(n);
            std::iota(coords.begin(), coords.end(), size_t{0});
        } else {
            // Partial Fisher-Yates: the first k entries end up a uniform
            // sample without replacement.
            coords.resize(n);
            std::iota(coords.begin(), coords.end(), size_t{0});
            for (size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
                const size_t j = i + (size_t)rng.integer(n - i);
                std::swap(coords[i], coords[j]);
            }
            coords.resize(opts.max_coords_per_tensor);
        }

        for (size_t idx : coords) {
            const real saved = tensor[idx];
            tensor[idx] = saved + opts.eps;
            const real f_plus = fn().item();
            tensor[idx] = saved - opts.eps;
            const real f_minus = fn().item();
            tensor[idx] = saved;

            const real numeric = (f_plus - f_minus) / (2 * opts.eps);
            const real analytic = tensor.has_grad() ? tensor.grad()[idx] : real(0);
            const real rel =
                std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + opts.denom_floor);
            ++result.coords_checked;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_tensor = name;
                result.worst_index = idx;
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace mscnet
