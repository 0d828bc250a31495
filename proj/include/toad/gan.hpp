#pragma once

// Per-scale generator/critic pairs and the coarse-to-fine training loop.

#include <atomic>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toad/corpus.hpp"
#include "toad/nn/layers.hpp"
#include "toad/pyramid.hpp"

namespace toad {

struct NetConfig {
    int conv_layers = 3;
    int kernel = 3;
    int filters = 64;
    double slope = 0.2;

    static NetConfig kart_preset() { return {5, 3, 64, 0.2}; }

    int receptive_field() const { return conv_layers * (kernel - 1) + 1; }
    // Zero padding applied once to the generator input so output matches input size.
    int padding() const { return conv_layers * (kernel - 1) / 2; }
    void validate() const;

    nlohmann::json to_json() const;
    static NetConfig from_json(const nlohmann::json& doc);
    bool operator==(const NetConfig&) const = default;
};

struct TrainConfig {
    int steps_per_scale = 4000;
    int critic_steps = 3;
    double gp_weight = 0.1;
    double reconstruction_weight = 10.0;
    double learning_rate = 5e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lr_decay = 0.1;
    double lr_decay_at = 0.8;  // fraction of steps
    std::uint64_t rng_seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& doc);
    bool operator==(const TrainConfig&) const = default;
};

struct StepLosses {
    float critic = 0;        // Wasserstein term plus penalty, last critic step
    float penalty = 0;       // penalty term alone
    float adversarial = 0;   // -mean(critic(fake))
    float reconstruction = 0;
};

nn::ConvNet<float> make_generator(int channels, const NetConfig& net, std::mt19937_64& rng);
nn::ConvNet<float> make_critic(int channels, const NetConfig& net, std::mt19937_64& rng);

struct ScaleModel {
    int scale_index = 0;
    int height = 0;  // training map size at this scale
    int width = 0;
    double noise_amp = 1.0;
    bool trained = false;
    nn::ConvNet<float> generator;
    nn::ConvNet<float> critic;
    // Fixed noise driving the reconstruction path (non-zero only at the coarsest scale).
    nn::Tensor<float> reconstruction_noise;
    std::string initial_hash;  // generator state before the first step
    std::string final_hash;
    std::vector<StepLosses> losses;
};

struct CascadeModel {
    TokenAlphabet alphabet;
    ScaleSchedule schedule;
    NetConfig net;
    TrainConfig train;
    int train_height = 0;
    int train_width = 0;
    LevelGrid level;  // the training level
    std::vector<ScaleModel> scales;  // coarsest first

    bool trained() const;
    int channels() const { return alphabet.size(); }
};

// i.i.d. N(0, sigma^2) at every (c, h, w) entry.
nn::Tensor<float> sample_noise(int channels, int h, int w, double sigma, std::mt19937_64& rng);

// prev + G(pad(noise + prev)). `noise` is already scaled. Eval-mode batch norm.
nn::Tensor<float> generator_forward(const ScaleModel& model, const nn::Tensor<float>& prev,
                                    const nn::Tensor<float>& noise, int padding);

// Training-graph variants.
nn::Var<float> generator_forward_train(nn::ConvNet<float>& generator, const nn::Tensor<float>& prev,
                                       const nn::Tensor<float>& noise, int padding);

template <typename T>
struct CriticLoss {
    nn::Var<T> total;
    nn::Var<T> wasserstein;
    nn::Var<T> penalty;
};

template <typename T>
using CriticFn = std::function<nn::Var<T>(const nn::Var<T>&)>;

// lambda * mean over samples and positions of (||grad_x critic(x_hat)|| - 1)^2, where the norm runs
// over channels. x_hat = eps * real + (1 - eps) * fake with one eps per sample. Differentiable
// with respect to the critic parameters.
template <typename T>
nn::Var<T> gradient_penalty(const CriticFn<T>& critic, const nn::Tensor<T>& real, const nn::Tensor<T>& fake,
                            const std::vector<T>& eps, T lambda);

// mean(critic(fake)) - mean(critic(real)) + penalty. Throws NonFiniteLoss.
template <typename T>
CriticLoss<T> critic_loss_with_gp(const CriticFn<T>& critic, const nn::Tensor<T>& real, const nn::Tensor<T>& fake,
                                  T lambda, std::mt19937_64& rng);

struct TrainHooks {
    std::function<void(int scale, int step, int steps)> on_step;
    std::function<void(const CascadeModel&)> on_scale_trained;
    const std::atomic<bool>* cancel = nullptr;
};

// Full-size output of the cascade below `upto` (exclusive) along the reconstruction path,
// at the training dims of scale `upto - 1`.
nn::Tensor<float> reconstruct(const CascadeModel& model, int upto);

// Trains scale n of `model` given trained scales 0..n-1; appends it.
void train_scale(CascadeModel& model, const ScalePyramid& pyramid, int n, const TrainHooks& hooks = {});

CascadeModel train_cascade(const LevelGrid& level, const TokenAlphabet& alphabet, const ScaleSchedule& schedule,
                           const NetConfig& net, const TrainConfig& cfg, const TrainHooks& hooks = {});

nn::Tensor<float> to_tensor(const SoftTokenMap& map);
SoftTokenMap to_map(const nn::Tensor<float>& tensor);

}  // namespace toad
