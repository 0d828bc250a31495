#include "toad/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "toad/errors.hpp"

namespace toad::nn {

template <typename T>
ConvNet<T>::ConvNet(const std::vector<int>& channels, int kernel, T slope, std::mt19937_64& rng)
    : kernel_(kernel), slope_(slope) {
    if (channels.size() < 2) throw Error("a network needs at least one layer");
    if (kernel < 1 || kernel % 2 == 0) throw Error("kernel size must be odd");
    std::normal_distribution<double> weight_init(0.0, 0.02);
    std::normal_distribution<double> gamma_init(1.0, 0.02);
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
        const int in = channels[i];
        const int out = channels[i + 1];
        Layer layer;
        Tensor<T> w(Shape{out, in, kernel, kernel});
        for (auto& v : w.span()) v = static_cast<T>(weight_init(rng));
        layer.weight = Var<T>(std::move(w), true);
        layer.bias = Var<T>(Tensor<T>(Shape{1, out, 1, 1}), true);
        layer.hidden = i + 2 < channels.size();
        if (layer.hidden) {
            Tensor<T> g(Shape{1, out, 1, 1});
            for (auto& v : g.span()) v = static_cast<T>(gamma_init(rng));
            layer.gamma = Var<T>(std::move(g), true);
            layer.beta = Var<T>(Tensor<T>(Shape{1, out, 1, 1}), true);
            layer.running_mean = Tensor<T>(Shape{1, out, 1, 1});
            layer.running_var = Tensor<T>(Shape{1, out, 1, 1}, T(1));
        }
        layers_.push_back(std::move(layer));
    }
}

template <typename T>
Var<T> ConvNet<T>::forward_train(const Var<T>& x) {
    Var<T> h = x;
    for (auto& layer : layers_) {
        h = conv2d(h, layer.weight);
        h = add(h, broadcast_nhw(layer.bias, h.shape()));
        if (!layer.hidden) continue;
        const Shape s = h.shape();
        const T count = static_cast<T>(static_cast<std::size_t>(s.n) * s.h * s.w);
        const Var<T> mean = scale(sum_nhw(h), T(1) / count);
        const Var<T> centered = sub(h, broadcast_nhw(mean, s));
        const Var<T> var = scale(sum_nhw(square(centered)), T(1) / count);
        const Var<T> inv_std = pow_scalar(add_scalar(var, kBatchNormEps), T(-0.5));
        h = mul(centered, broadcast_nhw(mul(inv_std, layer.gamma), s));
        h = add(h, broadcast_nhw(layer.beta, s));
        h = leaky_relu(h, slope_);

        const T unbias = count > T(1) ? count / (count - T(1)) : T(1);
        for (int c = 0; c < s.c; ++c) {
            const auto idx = static_cast<std::size_t>(c);
            layer.running_mean[idx] = (T(1) - kMomentum) * layer.running_mean[idx] + kMomentum * mean.value()[idx];
            layer.running_var[idx] = (T(1) - kMomentum) * layer.running_var[idx] + kMomentum * var.value()[idx] * unbias;
        }
    }
    return h;
}

template <typename T>
Var<T> ConvNet<T>::forward_eval(const Var<T>& x) const {
    Var<T> h = x;
    for (const auto& layer : layers_) {
        h = conv2d(h, layer.weight);
        h = add(h, broadcast_nhw(layer.bias, h.shape()));
        if (!layer.hidden) continue;
        const Shape s = h.shape();
        Tensor<T> gain(Shape{1, s.c, 1, 1});
        Tensor<T> shift(Shape{1, s.c, 1, 1});
        for (int c = 0; c < s.c; ++c) {
            const auto idx = static_cast<std::size_t>(c);
            gain[idx] = layer.gamma.value()[idx] / std::sqrt(layer.running_var[idx] + kBatchNormEps);
            shift[idx] = layer.beta.value()[idx] - layer.running_mean[idx] * gain[idx];
        }
        h = mul(h, broadcast_nhw(Var<T>(std::move(gain)), s));
        h = add(h, broadcast_nhw(Var<T>(std::move(shift)), s));
        h = leaky_relu(h, slope_);
    }
    return h;
}

template <typename T>
std::vector<Var<T>> ConvNet<T>::parameters() const {
    std::vector<Var<T>> out;
    for (const auto& layer : layers_) {
        out.push_back(layer.weight);
        out.push_back(layer.bias);
        if (layer.hidden) {
            out.push_back(layer.gamma);
            out.push_back(layer.beta);
        }
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ConvNet<T>::state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& layer = layers_[i];
        const std::string prefix = "layer" + std::to_string(i) + ".";
        out.emplace_back(prefix + "weight", &layer.weight.mutable_value());
        out.emplace_back(prefix + "bias", &layer.bias.mutable_value());
        if (layer.hidden) {
            out.emplace_back(prefix + "bn.gamma", &layer.gamma.mutable_value());
            out.emplace_back(prefix + "bn.beta", &layer.beta.mutable_value());
            out.emplace_back(prefix + "bn.running_mean", &layer.running_mean);
            out.emplace_back(prefix + "bn.running_var", &layer.running_var);
        }
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ConvNet<T>::state() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (auto& [name, ptr] : const_cast<ConvNet*>(this)->state()) out.emplace_back(name, ptr);
    return out;
}

template <typename T>
std::string ConvNet<T>::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, tensor] : state()) {
        feed(name.data(), name.size());
        feed(tensor->data(), tensor->numel() * sizeof(T));
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

template <typename T>
bool ConvNet<T>::same_shapes(const ConvNet& other) const {
    const auto a = state();
    const auto b = other.state();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].first != b[i].first || !(a[i].second->shape() == b[i].second->shape())) return false;
    return true;
}

template <typename T>
void ConvNet<T>::copy_from(const ConvNet& other) {
    if (!same_shapes(other)) throw ShapeMismatch("cannot copy between networks of different shapes");
    auto dst = state();
    const auto src = other.state();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second = *src[i].second;
}

template <typename T>
ConvNet<T>::ConvNet(const ConvNet& other) : layers_(other.layers_), kernel_(other.kernel_), slope_(other.slope_) {
    detach_parameters();
}

template <typename T>
ConvNet<T>& ConvNet<T>::operator=(const ConvNet& other) {
    if (this != &other) {
        layers_ = other.layers_;
        kernel_ = other.kernel_;
        slope_ = other.slope_;
        detach_parameters();
    }
    return *this;
}

template <typename T>
void ConvNet<T>::detach_parameters() {
    for (auto& layer : layers_) {
        layer.weight = Var<T>(layer.weight.value(), true);
        layer.bias = Var<T>(layer.bias.value(), true);
        if (layer.hidden) {
            layer.gamma = Var<T>(layer.gamma.value(), true);
            layer.beta = Var<T>(layer.beta.value(), true);
        }
    }
}

template <typename T>
void ConvNet<T>::zero_all() {
    for (auto& [name, tensor] : state()) std::fill(tensor->span().begin(), tensor->span().end(), T(0));
}

template <typename T>
Adam<T>::Adam(std::vector<Var<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value().numel(), 0.0);
        v_.emplace_back(p.value().numel(), 0.0);
    }
}

template <typename T>
void Adam<T>::step(const std::vector<Var<T>>& grads) {
    if (grads.size() != params_.size()) throw Error("optimizer received the wrong number of gradients");
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& value = params_[k].mutable_value();
        const auto& g = grads[k].value();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double gi = g[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            value[i] = static_cast<T>(value[i] - update);
        }
    }
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int h, int w) {
    const Shape s = x.shape();
    if (h < 1 || w < 1) throw Error("resize target must be at least 1x1");
    if (s.h == h && s.w == w) return x;
    struct Tap {
        int lo;
        int hi;
        T frac;
    };
    auto taps = [](int src, int dst) {
        std::vector<Tap> out(static_cast<std::size_t>(dst));
        for (int i = 0; i < dst; ++i) {
            if (dst == 1 || src == 1) {
                out[static_cast<std::size_t>(i)] = {0, 0, T(0)};
                continue;
            }
            const double pos = static_cast<double>(i) * (src - 1) / (dst - 1);
            const int lo = std::clamp(static_cast<int>(std::floor(pos)), 0, src - 1);
            out[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, src - 1), static_cast<T>(pos - lo)};
        }
        return out;
    };
    const auto rows = taps(s.h, h);
    const auto cols = taps(s.w, w);
    Tensor<T> out(Shape{s.n, s.c, h, w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < h; ++i) {
                const auto& ry = rows[static_cast<std::size_t>(i)];
                for (int j = 0; j < w; ++j) {
                    const auto& rx = cols[static_cast<std::size_t>(j)];
                    const T top = x(n, c, ry.lo, rx.lo) * (T(1) - rx.frac) + x(n, c, ry.lo, rx.hi) * rx.frac;
                    const T bottom = x(n, c, ry.hi, rx.lo) * (T(1) - rx.frac) + x(n, c, ry.hi, rx.hi) * rx.frac;
                    out(n, c, i, j) = top * (T(1) - ry.frac) + bottom * ry.frac;
                }
            }
    return out;
}

template class ConvNet<float>;
template class ConvNet<double>;
template class Adam<float>;
template class Adam<double>;
template Tensor<float> resize_bilinear(const Tensor<float>&, int, int);
template Tensor<double> resize_bilinear(const Tensor<double>&, int, int);

}  // namespace toad::nn
