#include "toad/gan.hpp"

#include <cmath>

#include "toad/errors.hpp"

namespace toad {

using nn::Tensor;
using nn::Var;

void NetConfig::validate() const {
    if (conv_layers < 2) throw Error("conv_layers must be at least 2");
    if (kernel < 1 || kernel % 2 == 0) throw Error("kernel must be odd");
    if (filters < 1) throw Error("filters must be positive");
    if (!(slope >= 0.0)) throw Error("activation slope must be non-negative");
}

nlohmann::json NetConfig::to_json() const {
    return {{"conv_layers", conv_layers}, {"kernel", kernel}, {"filters", filters}, {"slope", slope},
            {"receptive_field", receptive_field()}};
}

NetConfig NetConfig::from_json(const nlohmann::json& doc) {
    NetConfig c;
    c.conv_layers = doc.value("conv_layers", c.conv_layers);
    c.kernel = doc.value("kernel", c.kernel);
    c.filters = doc.value("filters", c.filters);
    c.slope = doc.value("slope", c.slope);
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    if (steps_per_scale < 1) throw Error("steps_per_scale must be at least 1");
    if (critic_steps < 1) throw Error("critic_steps must be at least 1");
    if (!(gp_weight >= 0.0) || !(reconstruction_weight >= 0.0)) throw Error("loss weights must be non-negative");
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("Adam betas must be in [0, 1)");
    if (!(lr_decay > 0.0) || !(lr_decay_at >= 0.0 && lr_decay_at <= 1.0)) throw Error("invalid learning-rate decay");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"steps_per_scale", steps_per_scale},
            {"critic_steps", critic_steps},
            {"gp_weight", gp_weight},
            {"reconstruction_weight", reconstruction_weight},
            {"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"lr_decay", lr_decay},
            {"lr_decay_at", lr_decay_at},
            {"rng_seed", rng_seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
    TrainConfig c;
    c.steps_per_scale = doc.value("steps_per_scale", c.steps_per_scale);
    c.critic_steps = doc.value("critic_steps", c.critic_steps);
    c.gp_weight = doc.value("gp_weight", c.gp_weight);
    c.reconstruction_weight = doc.value("reconstruction_weight", c.reconstruction_weight);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.lr_decay = doc.value("lr_decay", c.lr_decay);
    c.lr_decay_at = doc.value("lr_decay_at", c.lr_decay_at);
    c.rng_seed = doc.value("rng_seed", c.rng_seed);
    c.validate();
    return c;
}

namespace {

std::vector<int> layer_widths(int in, int out, const NetConfig& net) {
    std::vector<int> widths{in};
    for (int i = 0; i + 1 < net.conv_layers; ++i) widths.push_back(net.filters);
    widths.push_back(out);
    return widths;
}

bool finite(float v) { return std::isfinite(v); }

}  // namespace

nn::ConvNet<float> make_generator(int channels, const NetConfig& net, std::mt19937_64& rng) {
    net.validate();
    return nn::ConvNet<float>(layer_widths(channels, channels, net), net.kernel, static_cast<float>(net.slope), rng);
}

nn::ConvNet<float> make_critic(int channels, const NetConfig& net, std::mt19937_64& rng) {
    net.validate();
    return nn::ConvNet<float>(layer_widths(channels, 1, net), net.kernel, static_cast<float>(net.slope), rng);
}

bool CascadeModel::trained() const {
    if (scales.empty() || scales.size() != schedule.factors.size()) return false;
    for (const auto& s : scales)
        if (!s.trained) return false;
    return true;
}

Tensor<float> sample_noise(int channels, int h, int w, double sigma, std::mt19937_64& rng) {
    if (!(sigma >= 0.0)) throw Error("noise amplitude must be non-negative");
    Tensor<float> z(nn::Shape{1, channels, h, w});
    if (sigma == 0.0) return z;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : z.span()) v = static_cast<float>(sigma * normal(rng));
    return z;
}

namespace {

Var<float> noisy_input(const Tensor<float>& prev, const Tensor<float>& noise, int padding) {
    if (!(prev.shape() == noise.shape()))
        throw ShapeMismatch("noise " + noise.shape().str() + " does not match input " + prev.shape().str());
    Tensor<float> in = prev;
    for (std::size_t i = 0; i < in.numel(); ++i) in[i] += noise[i];
    return nn::pad2d(Var<float>(std::move(in)), padding);
}

}  // namespace

Tensor<float> generator_forward(const ScaleModel& model, const Tensor<float>& prev, const Tensor<float>& noise,
                                int padding) {
    if (prev.shape().c != model.generator.in_channels())
        throw ShapeMismatch("input has " + std::to_string(prev.shape().c) + " channels, the model expects " +
                            std::to_string(model.generator.in_channels()));
    nn::NoGrad no_grad;
    const auto residual = model.generator.forward_eval(noisy_input(prev, noise, padding));
    Tensor<float> out = prev;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += residual.value()[i];
    return out;
}

Var<float> generator_forward_train(nn::ConvNet<float>& generator, const Tensor<float>& prev,
                                   const Tensor<float>& noise, int padding) {
    return nn::add(Var<float>(prev), generator.forward_train(noisy_input(prev, noise, padding)));
}

template <typename T>
Var<T> gradient_penalty(const CriticFn<T>& critic, const Tensor<T>& real, const Tensor<T>& fake,
                        const std::vector<T>& eps, T lambda) {
    const nn::Shape s = real.shape();
    if (!(s == fake.shape())) throw ShapeMismatch("real " + s.str() + " and fake " + fake.shape().str() + " differ");
    if (eps.size() != static_cast<std::size_t>(s.n)) throw Error("need one interpolation weight per sample");
    Tensor<T> mixed(s);
    const std::size_t per_sample = s.numel() / static_cast<std::size_t>(s.n);
    for (std::size_t i = 0; i < s.numel(); ++i) {
        const T e = eps[i / per_sample];
        mixed[i] = e * real[i] + (T(1) - e) * fake[i];
    }
    const Var<T> x_hat(std::move(mixed), true);
    const Var<T> out = nn::sum_all(critic(x_hat));
    const Var<T> g = nn::grad(out, {x_hat}, true)[0];
    const Var<T> norm = nn::pow_scalar(nn::add_scalar(nn::sum_channels(nn::square(g)), T(1e-12)), T(0.5));
    return nn::scale(nn::mean_all(nn::square(nn::add_scalar(norm, T(-1)))), lambda);
}

template <typename T>
CriticLoss<T> critic_loss_with_gp(const CriticFn<T>& critic, const Tensor<T>& real, const Tensor<T>& fake, T lambda,
                                  std::mt19937_64& rng) {
    if (!(real.shape() == fake.shape()))
        throw ShapeMismatch("real " + real.shape().str() + " and fake " + fake.shape().str() + " differ");
    const Var<T> on_real = nn::mean_all(critic(Var<T>(real)));
    const Var<T> on_fake = nn::mean_all(critic(Var<T>(fake)));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<T> eps(static_cast<std::size_t>(real.shape().n));
    for (auto& e : eps) e = static_cast<T>(uniform(rng));
    CriticLoss<T> loss;
    loss.wasserstein = nn::sub(on_fake, on_real);
    loss.penalty = gradient_penalty(critic, real, fake, eps, lambda);
    loss.total = nn::add(loss.wasserstein, loss.penalty);
    if (!std::isfinite(static_cast<double>(loss.total.item())))
        throw NonFiniteLoss("critic loss is not finite (wasserstein " + std::to_string(loss.wasserstein.item()) +
                            ", penalty " + std::to_string(loss.penalty.item()) + ")");
    return loss;
}

template Var<float> gradient_penalty(const CriticFn<float>&, const Tensor<float>&, const Tensor<float>&,
                                     const std::vector<float>&, float);
template Var<double> gradient_penalty(const CriticFn<double>&, const Tensor<double>&, const Tensor<double>&,
                                      const std::vector<double>&, double);
template CriticLoss<float> critic_loss_with_gp(const CriticFn<float>&, const Tensor<float>&, const Tensor<float>&,
                                               float, std::mt19937_64&);
template CriticLoss<double> critic_loss_with_gp(const CriticFn<double>&, const Tensor<double>&,
                                                const Tensor<double>&, double, std::mt19937_64&);

Tensor<float> to_tensor(const SoftTokenMap& map) {
    Tensor<float> t(nn::Shape{1, map.channels(), map.height(), map.width()});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(map.values()[i]);
    return t;
}

SoftTokenMap to_map(const Tensor<float>& tensor) {
    const auto s = tensor.shape();
    if (s.n != 1) throw ShapeMismatch("expected a single map, got " + s.str());
    SoftTokenMap map(s.c, s.h, s.w);
    for (std::size_t i = 0; i < tensor.numel(); ++i) map.values()[i] = tensor[i];
    return map;
}

namespace {

Tensor<float> zeros_like_scale(const ScaleModel& s, int channels) {
    return Tensor<float>(nn::Shape{1, channels, s.height, s.width});
}

// Random pass through the trained scales below n, resized to scale n.
Tensor<float> sample_below(const CascadeModel& model, int n, int h, int w, std::mt19937_64& rng) {
    const int pad = model.net.padding();
    Tensor<float> prev = zeros_like_scale(model.scales[0], model.channels());
    for (int k = 0; k < n; ++k) {
        const auto& s = model.scales[static_cast<std::size_t>(k)];
        const auto z = sample_noise(model.channels(), s.height, s.width, s.noise_amp, rng);
        const auto out = generator_forward(s, prev, z, pad);
        if (k + 1 < n) {
            const auto& next = model.scales[static_cast<std::size_t>(k + 1)];
            prev = nn::resize_bilinear(out, next.height, next.width);
        } else {
            prev = nn::resize_bilinear(out, h, w);
        }
    }
    return prev;
}

double rmse(const Tensor<float>& a, const Tensor<float>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.numel()));
}

}  // namespace

Tensor<float> reconstruct(const CascadeModel& model, int upto) {
    if (upto < 1 || upto > static_cast<int>(model.scales.size())) throw Error("invalid reconstruction depth");
    const int pad = model.net.padding();
    Tensor<float> prev = zeros_like_scale(model.scales[0], model.channels());
    Tensor<float> out;
    for (int k = 0; k < upto; ++k) {
        const auto& s = model.scales[static_cast<std::size_t>(k)];
        if (k > 0) prev = nn::resize_bilinear(out, s.height, s.width);
        const Tensor<float> z = k == 0 ? s.reconstruction_noise : Tensor<float>(prev.shape());
        out = generator_forward(s, prev, z, pad);
    }
    return out;
}

void train_scale(CascadeModel& model, const ScalePyramid& pyramid, int n, const TrainHooks& hooks) {
    const auto& cfg = model.train;
    cfg.validate();
    if (n != static_cast<int>(model.scales.size())) throw Error("scales must be trained in order");
    if (n >= static_cast<int>(pyramid.maps.size())) throw Error("scale index outside the pyramid");
    for (const auto& s : model.scales)
        if (!s.trained) throw UntrainedModel("scale " + std::to_string(s.scale_index) + " is not trained");

    const int channels = model.channels();
    const int pad = model.net.padding();
    const Tensor<float> real = to_tensor(pyramid.maps[static_cast<std::size_t>(n)]);
    const int h = real.shape().h;
    const int w = real.shape().w;
    if (h < model.net.receptive_field() || w < model.net.receptive_field())
        throw ShapeTooSmall("scale " + std::to_string(n) + " map is " + std::to_string(h) + "x" + std::to_string(w) +
                            ", below the receptive field " + std::to_string(model.net.receptive_field()));

    std::mt19937_64 rng(cfg.rng_seed + static_cast<std::uint64_t>(n));
    ScaleModel scale;
    scale.scale_index = n;
    scale.height = h;
    scale.width = w;

    Tensor<float> rec_prev(nn::Shape{1, channels, h, w});
    Tensor<float> rec_noise(nn::Shape{1, channels, h, w});
    if (n == 0) {
        scale.generator = make_generator(channels, model.net, rng);
        scale.critic = make_critic(channels, model.net, rng);
        scale.noise_amp = 1.0;
        rec_noise = sample_noise(channels, h, w, 1.0, rng);
        scale.reconstruction_noise = rec_noise;
    } else {
        const auto& below = model.scales[static_cast<std::size_t>(n - 1)];
        scale.generator = below.generator.clone();
        scale.critic = below.critic.clone();
        rec_prev = nn::resize_bilinear(reconstruct(model, n), h, w);
        scale.noise_amp = rmse(real, rec_prev);
    }
    scale.initial_hash = scale.generator.hash();

    auto& G = scale.generator;
    auto& D = scale.critic;
    nn::Adam<float> opt_g(G.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    nn::Adam<float> opt_d(D.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    const CriticFn<float> critic = [&D](const Var<float>& x) { return D.forward_train(x); };
    const int decay_step = static_cast<int>(std::floor(cfg.lr_decay_at * cfg.steps_per_scale));
    const auto lambda = static_cast<float>(cfg.gp_weight);
    const auto alpha = static_cast<float>(cfg.reconstruction_weight);

    scale.losses.reserve(static_cast<std::size_t>(cfg.steps_per_scale));
    for (int step = 0; step < cfg.steps_per_scale; ++step) {
        if (hooks.cancel && hooks.cancel->load()) throw Interrupted("training cancelled at scale " + std::to_string(n));
        if (step == decay_step && step > 0) {
            opt_g.set_lr(cfg.learning_rate * cfg.lr_decay);
            opt_d.set_lr(cfg.learning_rate * cfg.lr_decay);
        }

        StepLosses record;
        Var<float> fake;
        for (int j = 0; j < cfg.critic_steps; ++j) {
            const Tensor<float> prev = n == 0 ? Tensor<float>(real.shape()) : sample_below(model, n, h, w, rng);
            const auto z = sample_noise(channels, h, w, scale.noise_amp, rng);
            if (j + 1 == cfg.critic_steps) {
                fake = generator_forward_train(G, prev, z, pad);
            } else {
                nn::NoGrad no_grad;
                fake = generator_forward_train(G, prev, z, pad);
            }
            const auto loss = critic_loss_with_gp(critic, real, fake.value(), lambda, rng);
            opt_d.step(nn::grad(loss.total, D.parameters()));
            record.critic = loss.total.item();
            record.penalty = loss.penalty.item();
        }

        const Var<float> adversarial = nn::scale(nn::mean_all(D.forward_train(fake)), -1.0f);
        const Var<float> reconstruction =
            nn::scale(nn::mse(generator_forward_train(G, rec_prev, rec_noise, pad), Var<float>(real)), alpha);
        const Var<float> total = nn::add(adversarial, reconstruction);
        record.adversarial = adversarial.item();
        record.reconstruction = reconstruction.item();
        if (!finite(record.adversarial) || !finite(record.reconstruction))
            throw NonFiniteLoss("generator loss is not finite at scale " + std::to_string(n) + ", step " +
                                std::to_string(step));
        opt_g.step(nn::grad(total, G.parameters()));
        scale.losses.push_back(record);
        if (hooks.on_step) hooks.on_step(n, step + 1, cfg.steps_per_scale);
    }

    scale.final_hash = G.hash();
    scale.trained = true;
    model.scales.push_back(std::move(scale));
}

CascadeModel train_cascade(const LevelGrid& level, const TokenAlphabet& alphabet, const ScaleSchedule& schedule,
                           const NetConfig& net, const TrainConfig& cfg, const TrainHooks& hooks) {
    net.validate();
    cfg.validate();
    schedule.validate();
    CascadeModel model;
    model.alphabet = alphabet;
    model.schedule = schedule;
    model.net = net;
    model.train = cfg;
    model.train_height = level.height();
    model.train_width = level.width();
    model.level = level;
    const auto pyramid = build_pyramid(level, alphabet, schedule);
    for (int n = 0; n < schedule.size(); ++n) {
        train_scale(model, pyramid, n, hooks);
        if (hooks.on_scale_trained) hooks.on_scale_trained(model);
    }
    return model;
}

}  // namespace toad
