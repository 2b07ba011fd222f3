#include <cmath>

#include "doctest.h"
#include "mscnet/gradcheck.hpp"
#include "mscnet/ops.hpp"
#include "mscnet/tensor.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mscnet;
using testutil::make_probe;
using testutil::max_abs_diff;
using testutil::probe_loss;
using testutil::random_kink_free;
using testutil::random_tensor;

namespace {
constexpr real kOracleTol = real(1e-10);
constexpr real kGradTol = real(1e-4);
}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("construction and element access") {
        Tensor t(Shape{2, 3, 4, 5}, real(1.5));
        CHECK(t.rank() == 4);
        CHECK(t.numel() == 120);
        CHECK(t[0] == real(1.5));
        t.at(1, 2, 3, 4) = real(-2);
        CHECK(t[119] == real(-2));
        CHECK(shape_str(t.shape()) == "[2,3,4,5]");
    }

    TEST_CASE("scalar and item") {
        Tensor s = Tensor::scalar(real(3.25));
        CHECK(s.numel() == 1);
        CHECK(s.item() == real(3.25));
        Tensor t(Shape{2, 2});
        CHECK_THROWS_AS((void)t.item(), InvalidArgument);
    }

    TEST_CASE("copies share storage, clone does not") {
        Tensor a(Shape{4}, real(1));
        Tensor b = a;
        b[0] = real(7);
        CHECK(a[0] == real(7));
        Tensor c = a.clone();
        c[0] = real(9);
        CHECK(a[0] == real(7));
    }

    TEST_CASE("zero-extent shapes are rejected") {
        CHECK_THROWS_AS(Tensor(Shape{2, 0, 3}), InvalidArgument);
        CHECK_THROWS_AS(Tensor(Shape{}), InvalidArgument);
    }

    TEST_CASE("backward validates its inputs") {
        SUBCASE("no active tape") {
            Tensor x(Shape{1}, real(2), true);
            CHECK_THROWS_AS(backward(x), StateError);
        }
        SUBCASE("non-scalar loss") {
            TapeScope scope;
            Tensor x(Shape{3}, real(1), true);
            Tensor y = relu(x);
            CHECK_THROWS_AS(backward(y), InvalidArgument);
        }
        SUBCASE("loss not produced under the tape") {
            TapeScope scope;
            Tensor lone = Tensor::scalar(real(1));
            CHECK_THROWS_AS(backward(lone), StateError);
        }
        SUBCASE("tape cannot run twice") {
            TapeScope scope;
            Tensor x(Shape{1}, real(0.5), true);
            Tensor loss = sum(sigmoid(x));
            backward(loss);
            CHECK(x.has_grad());
            CHECK_THROWS_AS(backward(loss), StateError);
        }
    }

    TEST_CASE("grad accumulates across uses of one tensor") {
        TapeScope scope;
        Tensor x(Shape{2}, real(0), true);
        x[0] = real(1);
        x[1] = real(2);
        Tensor loss = sum(add(x, x));
        backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(2).epsilon(1e-12));
        CHECK(x.grad()[1] == doctest::Approx(2).epsilon(1e-12));
    }

    TEST_CASE("NoGradGuard suppresses recording") {
        TapeScope scope;
        Tensor x(Shape{2}, real(1), true);
        {
            NoGradGuard ng;
            Tensor y = relu(x);
            CHECK_FALSE(y.on_tape());
        }
        CHECK(scope.tape().size() == 0);
    }

    TEST_CASE("finite checks flag NaN when enabled") {
        Tensor x(Shape{1, 1, 2, 2});
        x[0] = std::numeric_limits<real>::quiet_NaN();
        set_finite_checks(true);
        CHECK_THROWS_AS((void)scale(x, real(2)), NumericalError);
        set_finite_checks(false);
        CHECK_NOTHROW((void)scale(x, real(2)));
    }
}

TEST_SUITE("ops_forward") {
    TEST_CASE("conv2d matches the loop oracle across configurations") {
        Rng rng(101);
        struct Cfg {
            size_t cin, cout, k, stride, ph, pw, groups;
        };
        const Cfg cfgs[] = {
            {3, 4, 3, 1, 1, 1, 1},   // padded 3x3
            {3, 5, 1, 1, 0, 0, 1},   // pointwise
            {3, 4, 3, 2, 1, 1, 1},   // strided
            {2, 3, 5, 1, 2, 2, 1},   // 5x5
            {4, 4, 3, 1, 1, 1, 4},   // depthwise
            {4, 6, 3, 1, 1, 1, 2},   // grouped
            {3, 4, 3, 1, 0, 0, 1},   // valid (no padding)
            {2, 2, 7, 1, 3, 3, 1},   // 7x7
        };
        for (const Cfg& c : cfgs) {
            CAPTURE(c.k);
            CAPTURE(c.groups);
            Tensor x = random_tensor(rng, {2, c.cin, 9, 8});
            Tensor w = random_tensor(rng, {c.cout, c.cin / c.groups, c.k, c.k});
            Tensor b = random_tensor(rng, {c.cout});
            Tensor got = conv2d(x, w, b, c.stride, {c.ph, c.pw}, c.groups);
            Tensor want = oracle::conv2d(x, w, &b, c.stride, c.ph, c.pw, c.groups);
            REQUIRE(got.shape() == want.shape());
            CHECK(max_abs_diff(got, want) < kOracleTol);
        }
    }

    TEST_CASE("conv2d without bias") {
        Rng rng(102);
        Tensor x = random_tensor(rng, {1, 3, 6, 6});
        Tensor w = random_tensor(rng, {4, 3, 3, 3});
        Tensor got = conv2d(x, w, Tensor(), 1, {1, 1});
        Tensor want = oracle::conv2d(x, w, nullptr, 1, 1, 1);
        CHECK(max_abs_diff(got, want) < kOracleTol);
    }

    TEST_CASE("conv2d asymmetric padding matches oracle") {
        Rng rng(103);
        Tensor x = random_tensor(rng, {1, 2, 7, 7});
        Tensor wv = random_tensor(rng, {3, 2, 5, 1});
        Tensor got = conv2d(x, wv, Tensor(), 1, {2, 0});
        Tensor want = oracle::conv2d(x, wv, nullptr, 1, 2, 0);
        REQUIRE(got.shape() == Shape{1, 3, 7, 7});
        CHECK(max_abs_diff(got, want) < kOracleTol);
    }

    TEST_CASE("conv2d input validation") {
        Tensor x(Shape{1, 3, 8, 8});
        Tensor w(Shape{4, 3, 3, 3});
        CHECK_THROWS_AS((void)conv2d(x, w, Tensor(), 0, {1, 1}), InvalidArgument);
        CHECK_THROWS_AS((void)conv2d(x, Tensor(Shape{4, 2, 3, 3}), Tensor(), 1, {1, 1}), InvalidArgument);
        CHECK_THROWS_AS((void)conv2d(x, w, Tensor(Shape{5}), 1, {1, 1}), InvalidArgument);
        CHECK_THROWS_AS((void)conv2d(x, w, Tensor(), 1, {1, 1}, 2), InvalidArgument);
        CHECK_THROWS_AS((void)conv2d(Tensor(Shape{1, 3, 2, 2}), Tensor(Shape{4, 3, 5, 5}), Tensor(), 1, {0, 0}),
                        InvalidArgument);
    }

    TEST_CASE("asym_conv equals the two-pass 1-D oracle") {
        Rng rng(104);
        for (size_t k : {size_t(3), size_t(5), size_t(7)}) {
            CAPTURE(k);
            Tensor x = random_tensor(rng, {2, 3, 8, 9});
            Tensor wv = random_tensor(rng, {5, 3, k, 1});
            Tensor wh = random_tensor(rng, {4, 5, 1, k});
            Tensor got = asym_conv(x, wv, wh);
            Tensor want = oracle::asym_conv(x, wv, wh);
            REQUIRE(got.shape() == Shape{2, 4, 8, 9});
            CHECK(max_abs_diff(got, want) < kOracleTol);
        }
        Tensor x(Shape{1, 2, 4, 4});
        CHECK_THROWS_AS((void)asym_conv(x, Tensor(Shape{3, 2, 4, 1}), Tensor(Shape{3, 3, 1, 4})),
                        InvalidArgument);
        CHECK_THROWS_AS((void)asym_conv(x, Tensor(Shape{3, 2, 3, 1}), Tensor(Shape{3, 3, 3, 1})),
                        InvalidArgument);
    }

    TEST_CASE("pooling matches enumeration oracles") {
        Rng rng(105);
        Tensor x = random_tensor(rng, {2, 3, 7, 9});
        CHECK(max_abs_diff(max_pool2d(x, 2, 2), oracle::max_pool2d(x, 2, 2)) < kOracleTol);
        CHECK(max_abs_diff(max_pool2d(x, 3, 2), oracle::max_pool2d(x, 3, 2)) < kOracleTol);
        CHECK(max_abs_diff(avg_pool2d(x, 2, 2), oracle::avg_pool2d(x, 2, 2)) < kOracleTol);
        CHECK(max_abs_diff(avg_pool2d(x, 3, 1), oracle::avg_pool2d(x, 3, 1)) < kOracleTol);
        CHECK(max_abs_diff(global_avg_pool(x), oracle::global_avg_pool(x)) < kOracleTol);
        CHECK(max_abs_diff(global_max_pool(x), oracle::global_max_pool(x)) < kOracleTol);
        CHECK(max_abs_diff(channel_avg_pool(x), oracle::channel_avg_pool(x)) < kOracleTol);
        CHECK(max_abs_diff(channel_max_pool(x), oracle::channel_max_pool(x)) < kOracleTol);
        CHECK_THROWS_AS((void)max_pool2d(x, 10, 1), InvalidArgument);
    }

    TEST_CASE("batchnorm train mode standardizes each channel") {
        Rng rng(106);
        const size_t C = 3;
        Tensor x = random_tensor(rng, {4, C, 5, 5}, real(-3), real(5));
        Tensor gamma(Shape{C}, real(1));
        Tensor beta(Shape{C}, real(0));
        Tensor rm(Shape{C}, real(0));
        Tensor rv(Shape{C}, real(1));
        Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true);
        const size_t m = 4 * 5 * 5;
        for (size_t c = 0; c < C; ++c) {
            real s = 0, ss = 0;
            for (size_t n = 0; n < 4; ++n)
                for (size_t h = 0; h < 5; ++h)
                    for (size_t w = 0; w < 5; ++w) {
                        const real v = y.at(n, c, h, w);
                        s += v;
                        ss += v * v;
                    }
            const real mu = s / (real)m;
            const real var = ss / (real)m - mu * mu;
            CHECK(std::abs(mu) < 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps-induced bias only
        }
    }

    TEST_CASE("batchnorm affine transform and running-stat update") {
        Rng rng(107);
        const size_t C = 2;
        Tensor x = random_tensor(rng, {3, C, 4, 4}, real(-2), real(2));
        Tensor gamma(Shape{C}, real(2));
        Tensor beta(Shape{C}, real(3));
        Tensor rm(Shape{C}, real(0.5));
        Tensor rv(Shape{C}, real(2));
        Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true);

        const size_t m = 3 * 4 * 4;
        for (size_t c = 0; c < C; ++c) {
            // Recompute the batch statistics directly.
            real s = 0;
            for (size_t n = 0; n < 3; ++n)
                for (size_t i = 0; i < 16; ++i) s += x.at(n, c, i / 4, i % 4);
            const real mu = s / (real)m;
            real ss = 0;
            for (size_t n = 0; n < 3; ++n)
                for (size_t i = 0; i < 16; ++i) {
                    const real d = x.at(n, c, i / 4, i % 4) - mu;
                    ss += d * d;
                }
            const real var = ss / (real)m;
            CHECK(rm[c] == doctest::Approx(0.9 * 0.5 + 0.1 * mu).epsilon(1e-12));
            CHECK(rv[c] ==
                  doctest::Approx(0.9 * 2.0 + 0.1 * var * (double)m / (double)(m - 1)).epsilon(1e-12));
            // Output mean should be beta, output std gamma.
            real ys = 0;
            for (size_t n = 0; n < 3; ++n)
                for (size_t i = 0; i < 16; ++i) ys += y.at(n, c, i / 4, i % 4);
            CHECK(ys / (real)m == doctest::Approx(3.0).epsilon(1e-10));
        }
        (void)m;
    }

    TEST_CASE("batchnorm eval mode uses running stats and leaves them alone") {
        Tensor x(Shape{1, 1, 2, 2});
        x[0] = 1;
        x[1] = 2;
        x[2] = 3;
        x[3] = 4;
        Tensor gamma(Shape{1}, real(1));
        Tensor beta(Shape{1}, real(0));
        Tensor rm(Shape{1}, real(2));
        Tensor rv(Shape{1}, real(4));
        Tensor y = batchnorm2d(x, gamma, beta, rm, rv, false);
        CHECK(rm[0] == real(2));
        CHECK(rv[0] == real(4));
        // (x - 2) / sqrt(4 + 1e-5)
        CHECK(y[0] == doctest::Approx((1.0 - 2.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));
        CHECK(y[3] == doctest::Approx((4.0 - 2.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));
    }

    TEST_CASE("activation values") {
        Tensor x(Shape{5});
        x[0] = -2;
        x[1] = 0;
        x[2] = 3;
        x[3] = 7;
        x[4] = 6;
        Tensor r = relu(x);
        CHECK(r[0] == 0);
        CHECK(r[2] == 3);
        Tensor r6 = relu6(x);
        CHECK(r6[3] == 6);
        CHECK(r6[4] == 6);
        CHECK(r6[0] == 0);
        Tensor s = sigmoid(x);
        CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(s[2] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))).epsilon(1e-12));
    }

    TEST_CASE("upsample2x nearest replicates pixels") {
        Tensor x(Shape{1, 1, 2, 2});
        x[0] = 1;
        x[1] = 2;
        x[2] = 3;
        x[3] = 4;
        Tensor y = upsample2x(x, UpsampleMode::kNearest);
        REQUIRE(y.shape() == Shape{1, 1, 4, 4});
        CHECK(y.at(0, 0, 0, 0) == 1);
        CHECK(y.at(0, 0, 0, 1) == 1);
        CHECK(y.at(0, 0, 1, 1) == 1);
        CHECK(y.at(0, 0, 0, 2) == 2);
        CHECK(y.at(0, 0, 3, 3) == 4);
    }

    TEST_CASE("upsample2x bilinear: constants preserved, 1-D ramp known values") {
        Tensor c(Shape{2, 3, 4, 4}, real(0.7));
        Tensor yc = upsample2x(c, UpsampleMode::kBilinear);
        for (size_t i = 0; i < yc.numel(); ++i) REQUIRE(yc[i] == doctest::Approx(0.7).epsilon(1e-12));

        Tensor x(Shape{1, 1, 1, 2});
        x[0] = 0;
        x[1] = 1;
        Tensor y = upsample2x(x, UpsampleMode::kBilinear);
        REQUIRE(y.shape() == Shape{1, 1, 2, 4});
        const real want[4] = {real(0), real(0.25), real(0.75), real(1)};
        for (size_t h = 0; h < 2; ++h)
            for (size_t w = 0; w < 4; ++w) CHECK(y.at(0, 0, h, w) == doctest::Approx(want[w]).epsilon(1e-12));
    }

    TEST_CASE("concat_channels layout and validation") {
        Rng rng(108);
        Tensor a = random_tensor(rng, {2, 3, 4, 5});
        Tensor b = random_tensor(rng, {2, 2, 4, 5});
        Tensor y = concat_channels(a, b);
        REQUIRE(y.shape() == Shape{2, 5, 4, 5});
        for (size_t n = 0; n < 2; ++n)
            for (size_t h = 0; h < 4; ++h)
                for (size_t w = 0; w < 5; ++w) {
                    for (size_t ch = 0; ch < 3; ++ch) REQUIRE(y.at(n, ch, h, w) == a.at(n, ch, h, w));
                    for (size_t ch = 0; ch < 2; ++ch) REQUIRE(y.at(n, 3 + ch, h, w) == b.at(n, ch, h, w));
                }
        CHECK_THROWS_AS((void)concat_channels(a, Tensor(Shape{2, 2, 4, 4})), InvalidArgument);
    }

    TEST_CASE("add/mul broadcasting") {
        Rng rng(109);
        Tensor x = random_tensor(rng, {2, 3, 4, 4});
        Tensor cvec = random_tensor(rng, {2, 3, 1, 1});
        Tensor smap = random_tensor(rng, {2, 1, 4, 4});

        Tensor y = mul(x, cvec);
        for (size_t n = 0; n < 2; ++n)
            for (size_t c = 0; c < 3; ++c)
                for (size_t h = 0; h < 4; ++h)
                    for (size_t w = 0; w < 4; ++w)
                        REQUIRE(y.at(n, c, h, w) ==
                                doctest::Approx(x.at(n, c, h, w) * cvec.at(n, c, 0, 0)).epsilon(1e-12));

        Tensor y2 = add(smap, x);  // small first: order must not matter
        for (size_t n = 0; n < 2; ++n)
            for (size_t c = 0; c < 3; ++c)
                for (size_t h = 0; h < 4; ++h)
                    for (size_t w = 0; w < 4; ++w)
                        REQUIRE(y2.at(n, c, h, w) ==
                                doctest::Approx(x.at(n, c, h, w) + smap.at(n, 0, h, w)).epsilon(1e-12));

        CHECK_THROWS_AS((void)add(x, Tensor(Shape{2, 2, 1, 1})), InvalidArgument);
        CHECK_THROWS_AS((void)mul(x, Tensor(Shape{1, 3, 1, 1})), InvalidArgument);
    }

    TEST_CASE("sum, mean, scale") {
        Tensor x(Shape{3});
        x[0] = 1;
        x[1] = 2;
        x[2] = 4.5;
        CHECK(sum(x).item() == doctest::Approx(7.5).epsilon(1e-12));
        CHECK(mean(x).item() == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(scale(x, real(-2))[2] == doctest::Approx(-9.0).epsilon(1e-12));
    }
}

TEST_SUITE("gradcheck_primitives") {
    TEST_CASE("conv2d gradients (plain, strided, grouped, depthwise)") {
        Rng rng(201);
        struct Cfg {
            size_t cin, cout, k, stride, pad, groups;
        };
        const Cfg cfgs[] = {
            {3, 4, 3, 1, 1, 1},
            {3, 4, 3, 2, 1, 1},
            {2, 6, 1, 1, 0, 2},
            {4, 4, 3, 1, 1, 4},
        };
        for (const Cfg& c : cfgs) {
            CAPTURE(c.groups);
            CAPTURE(c.stride);
            Tensor x = random_tensor(rng, {2, c.cin, 5, 6});
            Tensor w = random_tensor(rng, {c.cout, c.cin / c.groups, c.k, c.k}, real(-0.5), real(0.5));
            Tensor b = random_tensor(rng, {c.cout}, real(-0.2), real(0.2));
            Tensor probe;
            {
                NoGradGuard ng;
                probe = make_probe(rng, conv2d(x, w, b, c.stride, {c.pad, c.pad}, c.groups).shape());
            }
            auto fn = [&] { return probe_loss(conv2d(x, w, b, c.stride, {c.pad, c.pad}, c.groups), probe); };
            auto res = gradcheck(fn, {{"x", x}, {"w", w}, {"b", b}});
            INFO(res.describe());
            CHECK(res.ok(kGradTol));
        }
    }

    TEST_CASE("asym_conv gradients") {
        Rng rng(202);
        Tensor x = random_tensor(rng, {1, 2, 6, 6});
        Tensor wv = random_tensor(rng, {3, 2, 5, 1}, real(-0.5), real(0.5));
        Tensor wh = random_tensor(rng, {2, 3, 1, 5}, real(-0.5), real(0.5));
        Tensor probe;
        {
            NoGradGuard ng;
            probe = make_probe(rng, asym_conv(x, wv, wh).shape());
        }
        auto res = gradcheck([&] { return probe_loss(asym_conv(x, wv, wh), probe); },
                             {{"x", x}, {"wv", wv}, {"wh", wh}});
        INFO(res.describe());
        CHECK(res.ok(kGradTol));
    }

    TEST_CASE("batchnorm gradients, train and eval") {
        Rng rng(203);
        Tensor x = random_tensor(rng, {2, 3, 4, 4}, real(-2), real(2));
        Tensor gamma = random_tensor(rng, {3}, real(0.5), real(1.5));
        Tensor beta = random_tensor(rng, {3}, real(-0.5), real(0.5));
        Tensor probe = make_probe(rng, x.shape());
        for (bool training : {true, false}) {
            CAPTURE(training);
            Tensor rm = random_tensor(rng, {3}, real(-0.3), real(0.3));
            Tensor rv = random_tensor(rng, {3}, real(0.5), real(2));
            // Keep running stats fixed across the repeated forwards gradcheck
            // makes: hand it clones.
            auto fn = [&, rm, rv]() mutable {
                Tensor m = rm.clone(), v = rv.clone();
                return probe_loss(batchnorm2d(x, gamma, beta, m, v, training), probe);
            };
            auto res = gradcheck(fn, {{"x", x}, {"gamma", gamma}, {"beta", beta}});
            INFO(res.describe());
            CHECK(res.ok(kGradTol));
        }
    }

    TEST_CASE("activation gradients away from kinks") {
        Rng rng(204);
        Tensor x = random_kink_free(rng, {2, 3, 4, 4});
        Tensor probe = make_probe(rng, x.shape());
        const std::pair<const char*, Tensor (*)(const Tensor&)> acts[] = {
            {"relu", relu}, {"relu6", relu6}, {"sigmoid", sigmoid}};
        for (auto [name, op] : acts) {
            CAPTURE(name);
            auto res = gradcheck([&, op] { return probe_loss(op(x), probe); }, {{"x", x}});
            INFO(res.describe());
            CHECK(res.ok(kGradTol));
        }
        // relu6 upper kink: values near 6 but at a safe distance.
        Tensor hi = random_tensor(rng, {1, 2, 3, 3}, real(5.2), real(6.8));
        for (size_t i = 0; i < hi.numel(); ++i)
            if (std::abs(hi[i] - real(6)) < real(0.1)) hi[i] = real(6.3);
        Tensor probe2 = make_probe(rng, hi.shape());
        auto res = gradcheck([&] { return probe_loss(relu6(hi), probe2); }, {{"hi", hi}});
        INFO(res.describe());
        CHECK(res.ok(kGradTol));
    }

    TEST_CASE("pooling gradients") {
        Rng rng(205);
        Tensor x = random_tensor(rng, {2, 2, 6, 6});
        using Fn = Tensor (*)(const Tensor&);
        const std::pair<const char*, Fn> pools[] = {{"gap", global_avg_pool},
                                                    {"gmp", global_max_pool},
                                                    {"cap", channel_avg_pool},
                                                    {"cmp", channel_max_pool}};
        for (auto [name, op] : pools) {
            CAPTURE(name);
            Tensor probe;
            {
                NoGradGuard ng;
                probe = make_probe(rng, op(x).shape());
            }
            auto res = gradcheck([&, op] { return probe_loss(op(x), probe); }, {{"x", x}});
            INFO(res.describe());
            CHECK(res.ok(kGradTol));
        }
        for (bool is_max : {true, false}) {
            CAPTURE(is_max);
            auto op = [&](const Tensor& t) { return is_max ? max_pool2d(t, 2, 2) : avg_pool2d(t, 2, 2); };
            Tensor probe;
            {
                NoGradGuard ng;
                probe = make_probe(rng, op(x).shape());
            }
            auto res = gradcheck([&] { return probe_loss(op(x), probe); }, {{"x", x}});
            INFO(res.describe());
            CHECK(res.ok(kGradTol));
        }
    }

    TEST_CASE("upsample gradients, both modes") {
        Rng rng(206);
        Tensor x = random_tensor(rng, {2, 2, 3, 4});
        for (auto mode : {UpsampleMode::kNearest, UpsampleMode::kBilinear}) {
            Tensor probe;
            {
                NoGradGuard ng;
                probe = make_probe(rng, upsample2x(x, mode).shape());
            }
            auto res = gradcheck([&] { return probe_loss(upsample2x(x, mode), probe); }, {{"x", x}});
            INFO(res.describe());
            CHECK(res.ok(kGradTol));
        }
    }

    TEST_CASE("concat and broadcast arithmetic gradients") {
        Rng rng(207);
        Tensor a = random_tensor(rng, {2, 3, 3, 3});
        Tensor b = random_tensor(rng, {2, 2, 3, 3});
        Tensor probe;
        {
            NoGradGuard ng;
            probe = make_probe(rng, concat_channels(a, b).shape());
        }
        auto res = gradcheck([&] { return probe_loss(concat_channels(a, b), probe); }, {{"a", a}, {"b", b}});
        INFO(res.describe());
        CHECK(res.ok(kGradTol));

        Tensor x = random_tensor(rng, {2, 3, 4, 4});
        Tensor cvec = random_tensor(rng, {2, 3, 1, 1});
        Tensor smap = random_tensor(rng, {2, 1, 4, 4});
        Tensor probe_x = make_probe(rng, x.shape());
        for (bool use_mul : {true, false}) {
            CAPTURE(use_mul);
            auto res2 = gradcheck(
                [&] {
                    Tensor gated = use_mul ? mul(x, cvec) : add(x, cvec);
                    Tensor both = use_mul ? mul(smap, gated) : add(smap, gated);
                    return probe_loss(both, probe_x);
                },
                {{"x", x}, {"cvec", cvec}, {"smap", smap}});
            INFO(res2.describe());
            CHECK(res2.ok(kGradTol));
        }
    }

    TEST_CASE("scale, sum, mean gradients and a small composite") {
        Rng rng(208);
        Tensor x = random_kink_free(rng, {2, 2, 3, 3});
        auto res = gradcheck([&] { return mean(sigmoid(scale(x, real(1.7)))); }, {{"x", x}});
        INFO(res.describe());
        CHECK(res.ok(kGradTol));

        // Three-layer conv stack, every parameter checked.
        Tensor w1 = random_tensor(rng, {4, 2, 3, 3}, real(-0.5), real(0.5));
        Tensor w2 = random_tensor(rng, {4, 1, 3, 3}, real(-0.5), real(0.5));  // depthwise
        Tensor w3 = random_tensor(rng, {3, 4, 1, 1}, real(-0.5), real(0.5));
        Tensor b3 = random_tensor(rng, {3}, real(-0.2), real(0.2));
        auto stack = [&] {
            Tensor h = relu(conv2d(x, w1, Tensor(), 1, {1, 1}));
            h = relu6(conv2d(h, w2, Tensor(), 1, {1, 1}, 4));
            h = sigmoid(conv2d(h, w3, b3, 1, {0, 0}));
            return mean(h);
        };
        auto res2 = gradcheck(stack, {{"x", x}, {"w1", w1}, {"w2", w2}, {"w3", w3}, {"b3", b3}});
        INFO(res2.describe());
        CHECK(res2.ok(kGradTol));
    }
}
