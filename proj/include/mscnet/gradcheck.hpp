#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mscnet/tensor.hpp"

namespace mscnet {

struct GradCheckOptions {
    real eps = real(1e-5);
    // Relative error uses |a - n| / (|a| + |n| + denom_floor); the floor keeps
    // finite-difference noise on near-zero gradients from dominating.
    real denom_floor = real(1e-4);
    // 0 checks every coordinate; otherwise each tensor contributes at most
    // this many coordinates, chosen deterministically from `seed`.
    size_t max_coords_per_tensor = 0;
    uint64_t seed = 0x9e3779b9ull;
};

struct GradCheckResult {
    real max_rel_err = 0;
    std::string worst_tensor;
    size_t worst_index = 0;
    real worst_analytic = 0;
    real worst_numeric = 0;
    size_t coords_checked = 0;

    bool ok(real tol) const { return max_rel_err < tol; }
    std::string describe() const;
};

// Compares the tape gradient of the scalar `fn()` against central finite
// differences, perturbing each listed tensor coordinate-by-coordinate. `fn`
// must rebuild its graph from the listed tensors on every call.
GradCheckResult gradcheck(const std::function<Tensor()>& fn,
                          const std::vector<std::pair<std::string, Tensor>>& wrt,
                          const GradCheckOptions& opts = {});

}  // namespace mscnet
