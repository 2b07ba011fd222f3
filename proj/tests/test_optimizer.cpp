#include <cmath>
#include <vector>

#include "doctest.h"
#include "mscnet/optimizer.hpp"
#include "mscnet/tensor.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mscnet;
using namespace testutil;

namespace {

constexpr real kTol = real(1e-12);

// Decoupled-decay counterpart of oracle::adam_step: the decay term moves out
// of the gradient and onto the update itself.
void adam_step_decoupled(real& x, real grad, real& m, real& v, size_t t, real lr,
                         real beta1, real beta2, real eps, real weight_decay) {
    m = beta1 * m + (real(1) - beta1) * grad;
    v = beta2 * v + (real(1) - beta2) * grad * grad;
    const real mhat = m / (real(1) - std::pow(beta1, (real)t));
    const real vhat = v / (real(1) - std::pow(beta2, (real)t));
    x -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x);
}

Tensor param_with_grad(const std::vector<real>& values, const std::vector<real>& grads,
                       const std::vector<size_t>& shape) {
    Tensor t = Tensor::from_data(shape, values);
    t.set_requires_grad(true);
    t.ensure_grad();
    for (size_t i = 0; i < grads.size(); ++i) t.grad()[i] = grads[i];
    return t;
}

}  // namespace

TEST_SUITE("optimizer") {

TEST_CASE("first step with unit gradient moves a weight by almost exactly -lr") {
    // With m=v=0 and bias correction, mhat = grad and vhat = grad^2, so the
    // very first update is lr * g / (|g| + eps) regardless of magnitude.
    Tensor w = param_with_grad({real(0)}, {real(1)}, {1});
    AdamConfig cfg;
    cfg.weight_decay = real(0);
    Adam opt({w}, cfg);
    opt.step(real(0.1));

    const real expected = -real(0.1) * (real(1) / (real(1) + cfg.eps));
    CHECK(std::abs(w[0] - expected) < real(1e-15));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("zero gradients with zero decay leave parameters untouched") {
    Tensor w = param_with_grad({real(0.7), real(-1.3)}, {real(0), real(0)}, {2});
    AdamConfig cfg;
    cfg.weight_decay = real(0);
    Adam opt({w}, cfg);
    for (int i = 0; i < 3; ++i) opt.step();
    CHECK(w[0] == real(0.7));
    CHECK(w[1] == real(-1.3));
}

TEST_CASE("multi-step trajectory matches the scalar recurrence, coupled decay") {
    Rng rng(402);
    const size_t n = 5;
    std::vector<real> x0(n), seq_x(n);
    for (size_t i = 0; i < n; ++i) seq_x[i] = x0[i] = rng.uniform(real(-1), real(1));

    Tensor w = Tensor::from_data({n}, x0);
    w.set_requires_grad(true);
    AdamConfig cfg;
    cfg.weight_decay = real(5e-4);
    Adam opt({w}, cfg);

    std::vector<real> m(n, real(0)), v(n, real(0));
    for (size_t t = 1; t <= 7; ++t) {
        std::vector<real> g(n);
        for (size_t i = 0; i < n; ++i) g[i] = rng.normal(real(0), real(1));

        w.ensure_grad();
        for (size_t i = 0; i < n; ++i) w.grad()[i] = g[i];
        opt.step(cfg.lr);
        opt.zero_grad();

        for (size_t i = 0; i < n; ++i) {
            oracle::adam_step(seq_x[i], g[i], m[i], v[i], t, cfg.lr, cfg.beta1,
                              cfg.beta2, cfg.eps, cfg.weight_decay);
        }
        for (size_t i = 0; i < n; ++i) CHECK(std::abs(w[i] - seq_x[i]) < kTol);
    }
    CHECK(opt.step_count() == 7);
}

TEST_CASE("multi-step trajectory matches the scalar recurrence, decoupled decay") {
    Rng rng(403);
    const size_t n = 4;
    std::vector<real> x0(n), seq_x(n);
    for (size_t i = 0; i < n; ++i) seq_x[i] = x0[i] = rng.uniform(real(-1), real(1));

    Tensor w = Tensor::from_data({2, 2}, x0);
    w.set_requires_grad(true);
    AdamConfig cfg;
    cfg.weight_decay = real(0.01);
    cfg.decoupled_decay = true;
    Adam opt({w}, cfg);

    std::vector<real> m(n, real(0)), v(n, real(0));
    for (size_t t = 1; t <= 5; ++t) {
        std::vector<real> g(n);
        for (size_t i = 0; i < n; ++i) g[i] = rng.normal(real(0), real(1));

        w.ensure_grad();
        for (size_t i = 0; i < n; ++i) w.grad()[i] = g[i];
        opt.step(real(3e-4));
        opt.zero_grad();

        for (size_t i = 0; i < n; ++i) {
            adam_step_decoupled(seq_x[i], g[i], m[i], v[i], t, real(3e-4), cfg.beta1,
                                cfg.beta2, cfg.eps, cfg.weight_decay);
        }
        for (size_t i = 0; i < n; ++i) CHECK(std::abs(w[i] - seq_x[i]) < kTol);
    }
}

TEST_CASE("coupled and decoupled decay genuinely differ after one step") {
    auto run = [](bool decoupled) {
        Tensor w = param_with_grad({real(2)}, {real(0.5)}, {1});
        AdamConfig cfg;
        cfg.weight_decay = real(0.1);
        cfg.decoupled_decay = decoupled;
        Adam opt({w}, cfg);
        opt.step(real(0.05));
        return w[0];
    };
    CHECK(run(false) != run(true));
}

TEST_CASE("stepping with a missing gradient is a state error") {
    Tensor a = param_with_grad({real(1)}, {real(1)}, {1});
    Tensor b = Tensor::from_data({1}, {real(2)});
    b.set_requires_grad(true);  // requires_grad set, but backward never ran
    Adam opt({a, b});
    CHECK_THROWS_AS(opt.step(), StateError);
    // The failed call must not half-apply: neither the clock nor `a` moved.
    CHECK(opt.step_count() == 0);
    CHECK(a[0] == real(1));
}

TEST_CASE("constructor and step validate their inputs") {
    CHECK_THROWS_AS(Adam({}), InvalidArgument);

    Tensor w = param_with_grad({real(0)}, {real(1)}, {1});
    AdamConfig bad;
    bad.beta1 = real(1);
    CHECK_THROWS_AS(Adam({w}, bad), InvalidArgument);
    bad = AdamConfig{};
    bad.lr = real(0);
    CHECK_THROWS_AS(Adam({w}, bad), InvalidArgument);
    bad = AdamConfig{};
    bad.weight_decay = real(-1);
    CHECK_THROWS_AS(Adam({w}, bad), InvalidArgument);

    Adam opt({w});
    CHECK_THROWS_AS(opt.step(real(-0.1)), InvalidArgument);
}

TEST_CASE("zero_grad clears gradient buffers") {
    Tensor w = param_with_grad({real(0)}, {real(3)}, {1});
    Adam opt({w});
    opt.zero_grad();
    REQUIRE(w.has_grad());
    CHECK(w.grad()[0] == real(0));
}

TEST_CASE("cosine schedule hits its closed-form anchors") {
    const real lr0 = real(1e-4);
    CHECK(cosine_lr(0, 40, lr0) == lr0);
    CHECK(std::abs(cosine_lr(20, 40, lr0) - lr0 * real(0.5)) < kTol);

    const real expect39 =
        lr0 * real(0.5) *
        (real(1) + std::cos(real(3.14159265358979323846) * real(39) / real(40)));
    CHECK(std::abs(cosine_lr(39, 40, lr0) - expect39) < kTol);

    // Monotone decreasing across the whole schedule.
    real prev = cosine_lr(0, 40, lr0);
    for (size_t e = 1; e < 40; ++e) {
        const real cur = cosine_lr(e, 40, lr0);
        CHECK(cur < prev);
        prev = cur;
    }

    CHECK_THROWS_AS(cosine_lr(0, 0, lr0), InvalidArgument);
    CHECK_THROWS_AS(cosine_lr(40, 40, lr0), InvalidArgument);
}

}  // TEST_SUITE
