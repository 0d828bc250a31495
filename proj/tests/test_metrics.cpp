#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "toad/errors.hpp"
#include "toad/metrics.hpp"

using namespace toad;

namespace {

LevelGrid random_grid(std::mt19937_64& rng, int h, int w, int tokens) {
    std::uniform_int_distribution<int> pick(0, tokens - 1);
    LevelGrid g(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.at(r, c) = pick(rng);
    return g;
}

std::map<std::string, double> as_table(const PatternDistribution& d) {
    std::map<std::string, double> t;
    for (const auto& [k, n] : d.counts) t[k] = static_cast<double>(n);
    return t;
}

}  // namespace

TEST_CASE("pattern counting") {
    const auto uniform = pattern_distribution(LevelGrid(3, 3), 2);
    CHECK(uniform.counts.size() == 1);
    CHECK(uniform.total == 4);
    CHECK(pattern_distribution(LevelGrid(2, 2), 2).total == 1);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) CHECK(pattern_distribution(random_grid(rng, 6, 6, 4), 2).total == 25);
    CHECK_THROWS_AS(pattern_distribution(LevelGrid(3, 8), 4), PatternTooLarge);
}

TEST_CASE("tpkl on two disjoint single patterns") {
    PatternDistribution p{1, {{"A", 1}}, 1};
    PatternDistribution q{1, {{"B", 1}}, 1};
    const double eps = 1e-5;
    const double a = (1 + eps) / (1 + 2 * eps);
    const double b = eps / (1 + 2 * eps);
    const double expected = a * std::log(a / b) + b * std::log(b / a);
    CHECK(tpkl_div(p, q, 1.0, eps) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(tpkl_div(p, p) == 0.0);
}

TEST_CASE("tpkl matches explicit tables") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const int p = 1 + i % 3;
        const auto a = pattern_distribution(random_grid(rng, 5, 7, 3), p);
        const auto b = pattern_distribution(random_grid(rng, 4, 6, 3), p);
        const double w = u(rng);
        CHECK(std::abs(tpkl_div(a, b, w) - oracle::smoothed_kl(as_table(a), as_table(b), w, 1e-5)) < 1e-12);
    }
}

TEST_CASE("tpkl properties") {
    std::mt19937_64 rng(3);
    const auto a = pattern_distribution(random_grid(rng, 6, 9, 3), 2);
    const auto b = pattern_distribution(random_grid(rng, 6, 9, 3), 2);
    CHECK(tpkl_div(a, b) > 0.0);
    CHECK(std::abs(tpkl_div(a, b, 0.5) - tpkl_div(b, a, 0.5)) < 1e-12);
    CHECK_THROWS_AS(tpkl_div(a, pattern_distribution(LevelGrid(4, 4), 3)), SizeMismatch);
}

TEST_CASE("mean tpkl") {
    std::mt19937_64 rng(4);
    const auto original = random_grid(rng, 16, 40, 4);
    CHECK(mean_tpkl({original}, original) <= 1e-6);
    auto flipped = [&](int flips) {
        auto g = original;
        for (int i = 0; i < flips; ++i) g.at(i * 3 % 16, i * 7 % 40) = (g.at(i * 3 % 16, i * 7 % 40) + 1) % 4;
        return g;
    };
    const double one = mean_tpkl({flipped(1), flipped(1)}, original);
    const double five = mean_tpkl({flipped(5), flipped(5)}, original);
    CHECK(one > 0.0);
    CHECK(five > one);
    const auto rep = tpkl_report({flipped(5)}, original);
    CHECK(rep.per_size.size() == 3);
    CHECK(rep.mean == doctest::Approx((rep.per_size[0] + rep.per_size[1] + rep.per_size[2]) / 3));
    CHECK_THROWS(mean_tpkl({}, original));
}

TEST_CASE("divergence matrix") {
    std::mt19937_64 rng(5);
    std::map<std::string, LevelGrid> originals;
    std::map<std::string, std::vector<LevelGrid>> generated;
    for (const char* id : {"a", "b", "c"}) {
        originals[id] = random_grid(rng, 8, 20, 3);
        generated[id] = {originals[id]};
    }
    const auto m = divergence_matrix(generated, originals);
    REQUIRE(m.ids.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(m.values[i][i] <= 1e-6);
        for (int j = 0; j < 3; ++j) CHECK(m.values[i][j] >= m.values[i][i]);
    }
}

TEST_CASE("uniqueness") {
    const LevelGrid a(2, 2);
    LevelGrid b(2, 2);
    b.at(0, 0) = 1;
    CHECK(uniqueness(std::vector<LevelGrid>(100, a)) == 0.0);
    CHECK(uniqueness({a, a, b}) == doctest::Approx(1.0 / 3));
    CHECK(distinct_fraction({a, a, b}) == doctest::Approx(2.0 / 3));
    std::vector<LevelGrid> distinct;
    for (int i = 0; i < 100; ++i) {
        LevelGrid g(1, 7);
        for (int k = 0; k < 7; ++k) g.at(0, k) = (i >> k) & 1;
        distinct.push_back(g);
    }
    CHECK(uniqueness(distinct) == 1.0);
    CHECK_THROWS_AS(uniqueness({a, LevelGrid(2, 3)}), ShapeMismatch);
}

TEST_CASE("frequency matched random level") {
    LevelGrid ref(10, 10);
    for (int c = 0; c < 10; ++c) ref.at(9, c) = 2;
    const auto r = frequency_matched_random(ref, 20, 50, 1);
    int twos = 0;
    for (int v : r.cells()) {
        CHECK((v == 0 || v == 2));
        twos += v == 2;
    }
    CHECK(twos > 50);
    CHECK(twos < 150);
    CHECK(frequency_matched_random(ref, 20, 50, 1) == r);
}
