#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "toad/errors.hpp"
#include "toad/pyramid.hpp"

using namespace toad;

namespace {

TokenAlphabet five_tokens() {
    return TokenAlphabet({{'-', "sky", 0}, {'X', "ground", 1}, {'S', "brick", 2}, {'E', "enemy", 3}, {'?', "bonus", 4}});
}

LevelGrid random_grid(std::mt19937_64& rng, int h, int w, int tokens) {
    std::uniform_int_distribution<int> pick(0, tokens - 1);
    LevelGrid g(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.at(r, c) = pick(rng);
    return g;
}

}  // namespace

TEST_CASE("scaled_dim rounds half up") {
    CHECK(scaled_dim(16, 0.5) == 8);
    CHECK(scaled_dim(16, 0.75) == 12);
    CHECK(scaled_dim(16, 0.88) == 14);
    CHECK(scaled_dim(202, 0.88) == 178);
    CHECK(scaled_dim(5, 0.5) == 3);
    CHECK(scaled_dim(1, 0.1) == 1);
}

TEST_CASE("factor 1 gives the softmax of the one-hot map") {
    const auto a = five_tokens();
    std::mt19937_64 rng(3);
    const auto grid = random_grid(rng, 6, 7, a.size());
    const auto map = hierarchical_downsample(encode_onehot(grid, a), a, 1.0);
    const double hi = std::exp(1.0) / (std::exp(1.0) + 4.0);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 7; ++c) CHECK(map.at(grid.at(r, c), r, c) == doctest::Approx(hi).epsilon(1e-12));
    CHECK(decode_argmax(map) == grid);
}

TEST_CASE("downsampling matches the brute-force oracle on random grids") {
    const auto a = five_tokens();
    std::mt19937_64 rng(11);
    const double factors[] = {0.5, 0.75, 0.88, 0.3};
    for (int trial = 0; trial < 200; ++trial) {
        const auto grid = random_grid(rng, 8, 8, a.size());
        const double f = factors[trial % 4];
        const auto got = hierarchical_downsample(encode_onehot(grid, a), a, f);
        const auto want = oracle::downsample(grid, a, scaled_dim(8, f), scaled_dim(8, f));
        REQUIRE(got.height() == want.height());
        CHECK(decode_argmax(got) == decode_argmax(want));
        double worst = 0.0;
        for (std::size_t i = 0; i < got.values().size(); ++i)
            worst = std::max(worst, std::abs(got.values()[i] - want.values()[i]));
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("a rare high-rank token survives downsampling") {
    const auto a = five_tokens();
    LevelGrid grid(8, 8);
    grid.at(3, 3) = 4;
    const auto map = hierarchical_downsample(encode_onehot(grid, a), a, 0.5);
    const auto decoded = decode_argmax(map);
    int count = 0;
    for (int v : decoded.cells()) count += v == 4;
    CHECK(count >= 1);
}

TEST_CASE("bilinear resize is the identity at equal size and preserves constants") {
    SoftTokenMap m(2, 3, 5, 0.25);
    m.at(1, 2, 4) = 0.9;
    CHECK(bilinear_resize(m, 3, 5).values()[29] == 0.9);
    const SoftTokenMap flat(1, 4, 4, 0.7);
    const auto stretched = bilinear_resize(flat, 9, 13);
    for (double v : stretched.values()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("bad inputs are rejected") {
    const auto a = five_tokens();
    const auto onehot = encode_onehot(LevelGrid(4, 4), a);
    CHECK_THROWS_AS(hierarchical_downsample(onehot, a, 0.0), Error);
    CHECK_THROWS_AS(hierarchical_downsample(onehot, a, 1.5), Error);
    CHECK_THROWS_AS(hierarchical_downsample(SoftTokenMap(3, 4, 4), a, 0.5), ShapeMismatch);
    CHECK_THROWS_AS(hierarchical_downsample(SoftTokenMap(5, 4, 4), a, 0.5), EmptySupport);
}

TEST_CASE("fixed schedules are validated") {
    CHECK_NOTHROW(ScaleSchedule{{0.5, 0.75, 0.88, 1.0}}.validate());
    CHECK_THROWS(ScaleSchedule{{0.5, 0.4, 1.0}}.validate());
    CHECK_THROWS(ScaleSchedule{{0.5, 0.9}}.validate());
    CHECK_THROWS(ScaleSchedule{{}}.validate());
    const LevelGrid level(16, 64);
    CHECK(compute_scales(level, 7, ScalePolicy::platformer_default()).factors == std::vector<double>{0.5, 0.75, 0.88, 1.0});
    CHECK(compute_scales(level, 7, ScalePolicy::kart_default()).size() == 9);
}

TEST_CASE("automatic schedules keep the coarsest scale above the receptive field") {
    const auto s = compute_scales(LevelGrid(16, 100), 7, ScalePolicy::automatic());
    CHECK(s.factors.front() == doctest::Approx(0.5));
    CHECK(s.factors.back() == 1.0);
    for (std::size_t i = 1; i < s.factors.size(); ++i) CHECK(s.factors[i - 1] / s.factors[i] >= 0.75 - 1e-12);
    CHECK(scaled_dim(16, s.factors.front()) >= 7);
    CHECK_THROWS_AS(compute_scales(LevelGrid(5, 40), 7, ScalePolicy::automatic()), LevelTooSmall);
    CHECK(compute_scales(LevelGrid(7, 40), 7, ScalePolicy::automatic()).factors == std::vector<double>{1.0});
}

TEST_CASE("pyramid has one map per scale, coarsest first") {
    const auto a = five_tokens();
    std::mt19937_64 rng(5);
    const auto level = random_grid(rng, 16, 40, a.size());
    const auto p = build_pyramid(level, a, ScaleSchedule{{0.5, 0.75, 1.0}});
    REQUIRE(p.maps.size() == 3);
    CHECK(p.maps[0].height() == 8);
    CHECK(p.maps[0].width() == 20);
    CHECK(p.maps[2].width() == 40);
    CHECK(decode_argmax(p.maps[2]) == level);
}
