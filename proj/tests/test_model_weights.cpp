#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mscnet/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mscnet;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("desk-scale forward: shape, range, determinism") {
        MscNet model(ModelConfig::desk(), 42);
        model.set_training(false);
        Rng rng(701);
        Tensor img = random_tensor(rng, {1, 3, 64, 64}, 0, 1);
        Tensor y1 = model.forward(img);
        REQUIRE(y1.shape() == Shape{1, 1, 64, 64});
        for (size_t i = 0; i < y1.numel(); ++i) {
            REQUIRE(y1[i] > real(0));
            REQUIRE(y1[i] < real(1));
        }
        Tensor y2 = model.forward(img);
        CHECK(max_abs_diff(y1, y2) == 0);
    }

    TEST_CASE("fresh models do not collapse on flat input") {
        Tensor gray(Shape{1, 3, 64, 64}, real(0.5));
        for (uint64_t seed = 1; seed <= 10; ++seed) {
            CAPTURE(seed);
            MscNet model(ModelConfig::desk(), seed);
            Tensor y = model.forward(gray);  // training-mode statistics
            for (size_t i = 0; i < y.numel(); ++i) {
                REQUIRE(y[i] > real(0.01));
                REQUIRE(y[i] < real(0.99));
            }
        }
    }

    TEST_CASE("exactly four context modules, grouped census adds up") {
        MscNet model(ModelConfig::desk(), 7);
        std::set<std::string> msce_names;
        model.visit_state("", [&](const std::string& name, const Tensor&, bool) {
            if (name.rfind("decoder.msce", 0) == 0) {
                msce_names.insert(name.substr(0, name.find('.', 8)));
            }
        });
        CHECK(msce_names == std::set<std::string>{"decoder.msce1", "decoder.msce2", "decoder.msce3",
                                                  "decoder.msce4"});

        ParamCensus census = census_params(model);
        size_t sum = 0;
        for (auto& [prefix, count] : census.by_prefix) sum += count;
        CHECK(sum == census.total);
        REQUIRE(census.by_prefix.size() == 3);
        CHECK(census.by_prefix[0].first == "encoder");
        CHECK(census.by_prefix[1].first == "decoder");
        CHECK(census.by_prefix[2].first == "apfa");
        CHECK(census.by_prefix[0].second == oracle::backbone_param_count(0.25));
    }

    TEST_CASE("full-width parameter band") {
        MscNet model(ModelConfig::full(), 1);
        ParamCensus census = census_params(model);
        MESSAGE("full-width learnable parameters: ", census.total);
        CHECK(census.total >= 2'800'000);
        CHECK(census.total <= 3'800'000);
        CHECK(census.by_prefix[0].second == oracle::backbone_param_count(1.0));
    }

    TEST_CASE("every parameter learns (nonzero gradient over a few batches)") {
        MscNet model(ModelConfig::desk(), 11);
        Rng rng(702);
        std::vector<StateEntry> params;
        for (StateEntry& e : collect_state(model)) {
            if (e.learnable) params.push_back(e);
        }
        std::vector<real> mass(params.size(), 0);
        for (int round = 0; round < 3; ++round) {
            Tensor img = random_tensor(rng, {2, 3, 64, 64}, 0, 1);
            Tensor target = testutil::random_binary(rng, {2, 1, 64, 64});
            TapeScope scope;
            Tensor diff = add(model.forward(img), scale(target, real(-1)));
            backward(mean(mul(diff, diff)));
            for (size_t i = 0; i < params.size(); ++i) {
                Tensor t = params[i].tensor;
                if (!t.has_grad()) continue;
                for (size_t j = 0; j < t.numel(); ++j) mass[i] += std::abs(t.grad()[j]);
                t.zero_grad();
            }
        }
        for (size_t i = 0; i < params.size(); ++i) {
            CAPTURE(params[i].name);
            CHECK(mass[i] > 0);
        }
    }
}

TEST_SUITE("weights") {
    TEST_CASE("round trip is exact for a fresh model, across instances") {
        const auto path = temp_file("mscnet_test_roundtrip.mscw");
        MscNet a(ModelConfig::desk(), 21);
        a.set_training(false);
        Rng rng(801);
        Tensor img = random_tensor(rng, {1, 3, 64, 64}, 0, 1);
        Tensor ya = a.forward(img);
        save_weights(a, path.string());

        MscNet b(ModelConfig::desk(), 99);  // different init, same architecture
        b.set_training(false);
        load_weights(b, path.string());
        Tensor yb = b.forward(img);
        CHECK(max_abs_diff(ya, yb) == 0);

        // Saving what was just loaded reproduces the file byte for byte.
        const auto path2 = temp_file("mscnet_test_roundtrip2.mscw");
        save_weights(b, path2.string());
        CHECK(slurp(path) == slurp(path2));
        std::filesystem::remove(path);
        std::filesystem::remove(path2);
    }

    TEST_CASE("mismatched architecture is rejected with named offenders") {
        const auto path = temp_file("mscnet_test_mismatch.mscw");
        MscNet a(ModelConfig::desk(), 21);
        save_weights(a, path.string());

        ModelConfig thin = ModelConfig::desk();
        thin.decoder_width = 16;
        MscNet b(thin, 21);
        const Tensor snapshot = collect_state(b)[10].tensor.clone();
        const std::string snap_name = collect_state(b)[10].name;
        try {
            load_weights(b, path.string());
            FAIL("expected InvalidArgument");
        } catch (const InvalidArgument& e) {
            const std::string msg = e.what();
            CHECK(msg.find("decoder.") != std::string::npos);
            CHECK(msg.find("shape mismatch") != std::string::npos);
        }
        CHECK(max_abs_diff(collect_state(b)[10].tensor, snapshot) == 0);
        (void)snap_name;
        std::filesystem::remove(path);
    }

    TEST_CASE("corrupt files are rejected without touching the model") {
        const auto path = temp_file("mscnet_test_corrupt.mscw");
        MscNet a(ModelConfig::desk(), 21);
        save_weights(a, path.string());
        const std::vector<char> bytes = slurp(path);

        MscNet b(ModelConfig::desk(), 50);
        const std::vector<StateEntry> before = collect_state(b);
        std::vector<Tensor> snapshots;
        for (const StateEntry& e : before) snapshots.push_back(e.tensor.clone());

        auto unchanged = [&] {
            const std::vector<StateEntry> now = collect_state(b);
            for (size_t i = 0; i < now.size(); ++i) {
                if (max_abs_diff(now[i].tensor, snapshots[i]) != 0) return false;
            }
            return true;
        };

        SUBCASE("bad magic") {
            std::vector<char> bad = bytes;
            bad[0] = 'X';
            std::ofstream(path, std::ios::binary).write(bad.data(), (std::streamsize)bad.size());
            CHECK_THROWS_AS(load_weights(b, path.string()), FormatError);
            CHECK(unchanged());
        }
        SUBCASE("truncated mid-record") {
            std::ofstream(path, std::ios::binary)
                .write(bytes.data(), (std::streamsize)(bytes.size() / 2));
            CHECK_THROWS_AS(load_weights(b, path.string()), FormatError);
            CHECK(unchanged());
        }
        SUBCASE("truncated inside the magic") {
            std::ofstream(path, std::ios::binary).write(bytes.data(), 3);
            CHECK_THROWS_AS(load_weights(b, path.string()), FormatError);
            CHECK(unchanged());
        }
        SUBCASE("missing file") {
            CHECK_THROWS_AS(load_weights(b, (path.string() + ".nope")), IoError);
            CHECK(unchanged());
        }
        std::filesystem::remove(path);
    }
}
