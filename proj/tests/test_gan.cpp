#include <doctest.h>

#include <cmath>
#include <random>

#include "toad/errors.hpp"
#include "toad/gan.hpp"

using namespace toad;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor<float> random_map(int c, int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Tensor<float> t(Shape{1, c, h, w});
    for (auto& v : t.span()) v = u(rng);
    return t;
}

ScaleModel untrained_scale(int channels, const NetConfig& net, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ScaleModel s;
    s.generator = make_generator(channels, net, rng);
    s.critic = make_critic(channels, net, rng);
    return s;
}

LevelGrid toy_level(int h, int w) {
    LevelGrid g(h, w);
    for (int c = 0; c < w; ++c) {
        g.at(h - 1, c) = 1;
        if (c % 5 == 2) g.at(h - 2, c) = 1;
    }
    return g;
}

TokenAlphabet two_tokens() { return TokenAlphabet({{'-', "sky", 0}, {'X', "ground", 1}}); }

}  // namespace

TEST_CASE("net config invariants") {
    NetConfig net;
    CHECK(net.receptive_field() == 7);
    CHECK(net.padding() == 3);
    CHECK(NetConfig::kart_preset().receptive_field() == 11);
    CHECK_THROWS(NetConfig{1, 3, 64, 0.2}.validate());
    CHECK_THROWS(NetConfig{3, 4, 64, 0.2}.validate());
    CHECK(NetConfig::from_json(net.to_json()) == net);
    TrainConfig cfg;
    cfg.rng_seed = 42;
    CHECK(TrainConfig::from_json(cfg.to_json()) == cfg);
}

TEST_CASE("zero-residual generator returns its input exactly") {
    const NetConfig net;
    auto s = untrained_scale(4, net, 1);
    s.generator.zero_all();
    std::mt19937_64 rng(2);
    const auto prev = random_map(4, 10, 23, rng);
    const auto z = sample_noise(4, 10, 23, 0.7, rng);
    CHECK(generator_forward(s, prev, z, net.padding()) == prev);
}

TEST_CASE("generator is fully convolutional") {
    const NetConfig net;
    const auto s = untrained_scale(3, net, 3);
    std::mt19937_64 rng(4);
    for (int h : {7, 8, 16}) {
        for (int w : {7, 16, 40, 80, 200}) {
            const auto prev = random_map(3, h, w, rng);
            const auto out = generator_forward(s, prev, sample_noise(3, h, w, 1.0, rng), net.padding());
            CHECK(out.shape() == prev.shape());
        }
    }
}

TEST_CASE("generator forward is deterministic") {
    const NetConfig net;
    const auto s = untrained_scale(3, net, 5);
    std::mt19937_64 a(9);
    std::mt19937_64 b(9);
    const auto prev = Tensor<float>(Shape{1, 3, 8, 12}, 0.3f);
    CHECK(generator_forward(s, prev, sample_noise(3, 8, 12, 1.0, a), 3) ==
          generator_forward(s, prev, sample_noise(3, 8, 12, 1.0, b), 3));
}

TEST_CASE("generator rejects a foreign channel count") {
    const auto s = untrained_scale(3, NetConfig{}, 5);
    const Tensor<float> prev(Shape{1, 4, 8, 8});
    CHECK_THROWS_AS(generator_forward(s, prev, prev, 3), ShapeMismatch);
}

TEST_CASE("noise statistics") {
    std::mt19937_64 rng(10);
    CHECK(sample_noise(2, 3, 3, 0.0, rng) == Tensor<float>(Shape{1, 2, 3, 3}));
    const double sigma = 0.37;
    const int pixels = 1000 * 1000;
    const auto z = sample_noise(2, 1000, 1000, sigma, rng);
    double s0 = 0, s1 = 0, s01 = 0, m0 = 0, m1 = 0;
    for (int i = 0; i < pixels; ++i) {
        const double a = z[static_cast<std::size_t>(i)];
        const double b = z[static_cast<std::size_t>(pixels + i)];
        m0 += a;
        m1 += b;
        s0 += a * a;
        s1 += b * b;
        s01 += a * b;
    }
    m0 /= pixels;
    m1 /= pixels;
    const double sd0 = std::sqrt(s0 / pixels - m0 * m0);
    const double sd1 = std::sqrt(s1 / pixels - m1 * m1);
    CHECK(std::abs(sd0 - sigma) / sigma < 0.01);
    CHECK(std::abs(sd1 - sigma) / sigma < 0.01);
    const double corr = (s01 / pixels - m0 * m1) / (sd0 * sd1);
    CHECK(std::abs(corr) < 0.01);
    CHECK_THROWS(sample_noise(1, 1, 1, -1.0, rng));
}

TEST_CASE("critic loss special cases") {
    std::mt19937_64 rng(11);
    const NetConfig net;
    auto critic_net = make_critic(3, net, rng);
    const CriticFn<float> critic = [&](const Var<float>& x) { return critic_net.forward_train(x); };
    const auto real = random_map(3, 9, 9, rng);
    const auto same = critic_loss_with_gp(critic, real, real, 0.0f, rng);
    CHECK(same.total.item() == 0.0f);

    const CriticFn<float> constant = [](const Var<float>& x) {
        return nn::add_scalar(nn::scale(nn::sum_hw(x), 0.0f), 0.5f);
    };
    const auto fake = random_map(3, 9, 9, rng);
    const auto c = critic_loss_with_gp(constant, real, fake, 0.1f, rng);
    CHECK(c.wasserstein.item() == 0.0f);
    CHECK(c.penalty.item() == doctest::Approx(0.1).epsilon(1e-5));
    CHECK_THROWS_AS(critic_loss_with_gp(critic, real, random_map(3, 9, 8, rng), 0.1f, rng), ShapeMismatch);
}

TEST_CASE("penalty gradient matches finite differences") {
    std::mt19937_64 rng(12);
    const NetConfig net{2, 3, 4, 0.2};
    for (int draw = 0; draw < 5; ++draw) {
        nn::ConvNet<double> critic_net({3, net.filters, 1}, net.kernel, net.slope, rng);
        const CriticFn<double> critic = [&](const Var<double>& x) { return critic_net.forward_train(nn::pad2d(x, 2)); };
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Tensor<double> real(Shape{2, 3, 4, 4});
        Tensor<double> fake(Shape{2, 3, 4, 4});
        for (auto& v : real.span()) v = u(rng);
        for (auto& v : fake.span()) v = u(rng);
        const std::vector<double> eps{u(rng), u(rng)};
        const auto params = critic_net.parameters();
        const auto analytic = nn::grad(gradient_penalty(critic, real, fake, eps, 0.1), params);
        double diff = 0.0, norm = 0.0;
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor<double>& value = const_cast<Var<double>&>(params[k]).mutable_value();
            for (std::size_t i = 0; i < value.numel(); ++i) {
                const double keep = value[i];
                const double h = 1e-6;
                value[i] = keep + h;
                const double up = gradient_penalty(critic, real, fake, eps, 0.1).item();
                value[i] = keep - h;
                const double down = gradient_penalty(critic, real, fake, eps, 0.1).item();
                value[i] = keep;
                const double numeric = (up - down) / (2 * h);
                diff += std::pow(numeric - analytic[k].value()[i], 2);
                norm += numeric * numeric;
            }
        }
        CHECK(std::sqrt(diff / norm) < 1e-3);
    }
}

TEST_CASE("lowest-scale smoke training") {
    const auto alphabet = two_tokens();
    TrainConfig cfg;
    cfg.steps_per_scale = 200;
    cfg.rng_seed = 3;
    NetConfig net;
    net.filters = 16;
    const auto model = train_cascade(toy_level(16, 8), alphabet, ScaleSchedule{{1.0}}, net, cfg);
    REQUIRE(model.scales.size() == 1);
    CHECK(model.trained());
    CHECK(model.scales[0].noise_amp == 1.0);
    CHECK(model.scales[0].losses.size() == 200);
    const auto& last = model.scales[0].losses.back();
    CHECK(std::isfinite(last.critic));
    CHECK(std::isfinite(last.reconstruction));
}

TEST_CASE("scales initialise from the scale below and training is reproducible") {
    const auto alphabet = two_tokens();
    TrainConfig cfg;
    cfg.steps_per_scale = 20;
    cfg.rng_seed = 17;
    NetConfig net;
    net.filters = 8;
    const ScaleSchedule schedule{{0.5, 0.75, 1.0}};
    const auto a = train_cascade(toy_level(16, 32), alphabet, schedule, net, cfg);
    const auto b = train_cascade(toy_level(16, 32), alphabet, schedule, net, cfg);
    REQUIRE(a.scales.size() == 3);
    for (int n = 1; n < 3; ++n) {
        CHECK(a.scales[n].initial_hash == a.scales[n - 1].final_hash);
        CHECK(a.scales[n].noise_amp >= 0.0);
    }
    for (int n = 0; n < 3; ++n) {
        REQUIRE(a.scales[n].losses.size() == b.scales[n].losses.size());
        for (std::size_t i = 0; i < a.scales[n].losses.size(); ++i) {
            CHECK(a.scales[n].losses[i].critic == b.scales[n].losses[i].critic);
            CHECK(a.scales[n].losses[i].reconstruction == b.scales[n].losses[i].reconstruction);
        }
        CHECK(a.scales[n].final_hash == b.scales[n].final_hash);
    }
}

TEST_CASE("cancellation interrupts training") {
    std::atomic<bool> cancel{true};
    TrainHooks hooks;
    hooks.cancel = &cancel;
    TrainConfig cfg;
    cfg.steps_per_scale = 5;
    CHECK_THROWS_AS(train_cascade(toy_level(16, 8), two_tokens(), ScaleSchedule{{1.0}}, NetConfig{}, cfg, hooks),
                    Interrupted);
}

TEST_CASE("copies of a network do not share parameters") {
    const NetConfig net;
    auto s = untrained_scale(3, net, 21);
    const auto before = s.generator.hash();
    auto copy = s;
    copy.generator.zero_all();
    CHECK(s.generator.hash() == before);
    CHECK(copy.generator.hash() != before);
    auto assigned = s.generator;
    assigned = copy.generator;
    CHECK(assigned.hash() == copy.generator.hash());
    CHECK(s.generator.hash() == before);
}
