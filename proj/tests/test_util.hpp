#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mscnet/module.hpp"
#include "mscnet/ops.hpp"
#include "mscnet/tensor.hpp"

namespace testutil {

using mscnet::real;
using mscnet::Rng;
using mscnet::Shape;
using mscnet::Tensor;

inline Tensor random_tensor(Rng& rng, Shape shape, real lo = -1, real hi = 1) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = (real)rng.uniform((double)lo, (double)hi);
    return t;
}

// Values with |v| in [margin, range], random sign: keeps finite differences
// away from the kinks of relu-style activations.
inline Tensor random_kink_free(Rng& rng, Shape shape, real margin = real(0.2), real range = real(1)) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) {
        const real mag = (real)rng.uniform((double)margin, (double)range);
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

inline Tensor random_binary(Rng& rng, Shape shape, double p_fg = 0.5) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.bernoulli(p_fg) ? real(1) : real(0);
    return t;
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
    real worst = 0;
    for (size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Reduces an arbitrary tensor to a scalar through a fixed random linear
// functional, so gradcheck exercises every output coordinate with a
// distinct weight.
inline Tensor probe_loss(const Tensor& out, const Tensor& probe) {
    return mscnet::sum(mscnet::mul(out, probe));
}

inline Tensor make_probe(Rng& rng, const Shape& shape) { return random_tensor(rng, shape, real(0.1), real(1)); }

// Qualified name -> shared tensor handle, for weight surgery and
// hand-composition oracles.
inline std::map<std::string, Tensor> state_map(const mscnet::Module& root) {
    std::map<std::string, Tensor> m;
    root.visit_state("", [&](const std::string& name, const Tensor& t, bool) { m.emplace(name, t); });
    return m;
}

inline void fill(Tensor t, real v) {
    for (size_t i = 0; i < t.numel(); ++i) t[i] = v;
}

// Eval-mode batchnorm with the module's current running stats, for
// hand-composed forward chains.
inline Tensor bn_eval(const Tensor& x, std::map<std::string, Tensor>& st, const std::string& prefix) {
    Tensor rm = st.at(prefix + ".running_mean").clone();
    Tensor rv = st.at(prefix + ".running_var").clone();
    return mscnet::batchnorm2d(x, st.at(prefix + ".gamma"), st.at(prefix + ".beta"), rm, rv, false);
}

}  // namespace testutil
