#include <cmath>

#include "doctest.h"
#include "mscnet/module.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mscnet;
using testutil::bn_eval;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::state_map;

TEST_SUITE("module") {
    TEST_CASE("state registration order and names") {
        Rng rng(301);
        ConvBnAct block(rng, 3, 8, 3, 1, Act::kRelu);
        auto entries = collect_state(block, "stem.");
        REQUIRE(entries.size() == 5);
        CHECK(entries[0].name == "stem.conv.weight");
        CHECK(entries[0].learnable);
        CHECK(entries[1].name == "stem.bn.gamma");
        CHECK(entries[2].name == "stem.bn.beta");
        CHECK(entries[3].name == "stem.bn.running_mean");
        CHECK_FALSE(entries[3].learnable);
        CHECK(entries[4].name == "stem.bn.running_var");
        CHECK_FALSE(entries[4].learnable);
        CHECK(entries[0].tensor.shape() == Shape{8, 3, 3, 3});
        CHECK(entries[0].tensor.requires_grad());
        CHECK_FALSE(entries[3].tensor.requires_grad());
    }

    TEST_CASE("parameter count arithmetic") {
        Rng rng(302);
        Conv2d conv(rng, 8, 16, 3, 1, {1, 1}, 1, /*bias=*/true);
        CHECK(count_learnable(conv) == 3 * 3 * 8 * 16 + 16);
    }

    TEST_CASE("kaiming init is f32-exact with the expected spread") {
        Rng rng(303);
        Tensor w = kaiming_conv_init(rng, {64, 32, 3, 3});
        double s = 0, ss = 0;
        for (size_t i = 0; i < w.numel(); ++i) {
            REQUIRE((real)(float)w[i] == w[i]);
            s += w[i];
            ss += (double)w[i] * w[i];
        }
        const double n = (double)w.numel();
        const double mean = s / n;
        const double stddev = std::sqrt(ss / n - mean * mean);
        const double want = std::sqrt(2.0 / (32 * 3 * 3));
        CHECK(std::abs(mean) < 0.05 * want);
        CHECK(stddev == doctest::Approx(want).epsilon(0.05));
    }

    TEST_CASE("set_training reaches children") {
        Rng rng(304);
        ConvBnAct block(rng, 2, 4, 3, 1, Act::kRelu);
        auto st = state_map(block);
        Tensor x = random_tensor(rng, {2, 2, 6, 6});

        block.set_training(false);
        Tensor rm_before = st.at("bn.running_mean").clone();
        (void)block.forward(x);
        CHECK(max_abs_diff(st.at("bn.running_mean"), rm_before) == 0);

        block.set_training(true);
        (void)block.forward(x);
        CHECK(max_abs_diff(st.at("bn.running_mean"), rm_before) > 0);
    }

    TEST_CASE("ConvBnAct equals its hand-composed chain") {
        Rng rng(305);
        ConvBnAct block(rng, 3, 6, 3, 2, Act::kRelu6);
        auto st = state_map(block);
        Tensor x = random_tensor(rng, {2, 3, 8, 8});
        (void)block.forward(x);  // make the running stats non-trivial
        block.set_training(false);

        Tensor got = block.forward(x);
        Tensor want = relu6(bn_eval(conv2d(x, st.at("conv.weight"), Tensor(), 2, {1, 1}), st, "bn"));
        CHECK(max_abs_diff(got, want) == 0);
    }

    TEST_CASE("AsymConvBlock equals its hand-composed chain") {
        Rng rng(306);
        AsymConvBlock block(rng, 4, 5, 5);
        auto st = state_map(block);
        Tensor x = random_tensor(rng, {1, 4, 7, 7});
        (void)block.forward(x);
        block.set_training(false);

        Tensor got = block.forward(x);
        Tensor mid = relu(bn_eval(conv2d(x, st.at("vertical.weight"), Tensor(), 1, {2, 0}), st, "bn_v"));
        Tensor want =
            relu(bn_eval(conv2d(mid, st.at("horizontal.weight"), Tensor(), 1, {0, 2}), st, "bn_h"));
        CHECK(max_abs_diff(got, want) == 0);
        CHECK(got.shape() == Shape{1, 5, 7, 7});
    }
}
