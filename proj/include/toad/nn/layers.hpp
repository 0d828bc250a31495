#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "toad/nn/autograd.hpp"

namespace toad::nn {

// A stack of valid-padding convolutions. Every layer but the last is
// conv -> batch norm -> leaky ReLU; the last is a plain convolution.
template <typename T>
class ConvNet {
public:
    struct Layer {
        Var<T> weight;  // out x in x k x k
        Var<T> bias;    // 1 x out x 1 x 1
        bool hidden = false;
        Var<T> gamma;
        Var<T> beta;
        Tensor<T> running_mean;
        Tensor<T> running_var;
    };

    ConvNet() = default;
    // channels[i] -> channels[i + 1] for each layer.
    ConvNet(const std::vector<int>& channels, int kernel, T slope, std::mt19937_64& rng);
    // Copies are deep: the copy owns fresh parameter nodes.
    ConvNet(const ConvNet& other);
    ConvNet& operator=(const ConvNet& other);
    ConvNet(ConvNet&&) noexcept = default;
    ConvNet& operator=(ConvNet&&) noexcept = default;

    // Batch statistics; updates the running estimates.
    Var<T> forward_train(const Var<T>& x);
    // Running statistics; does not modify the network.
    Var<T> forward_eval(const Var<T>& x) const;

    int kernel() const { return kernel_; }
    int depth() const { return static_cast<int>(layers_.size()); }
    int in_channels() const { return layers_.front().weight.shape().c; }
    int out_channels() const { return layers_.back().weight.shape().n; }
    T slope() const { return slope_; }

    std::vector<Var<T>> parameters() const;
    // Parameters and running statistics, in a fixed order.
    std::vector<std::pair<std::string, Tensor<T>*>> state();
    std::vector<std::pair<std::string, const Tensor<T>*>> state() const;
    // FNV-1a over every state tensor, hex encoded.
    std::string hash() const;

    // Copies every tensor from `other`; shapes must match.
    void copy_from(const ConvNet& other);
    bool same_shapes(const ConvNet& other) const;

    ConvNet clone() const { return *this; }

    void zero_all();

    static constexpr T kBatchNormEps = T(1e-5);
    static constexpr T kMomentum = T(0.1);

private:
    void detach_parameters();

    std::vector<Layer> layers_;
    int kernel_ = 3;
    T slope_ = T(0.2);
};

template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Var<T>> params, double lr, double beta1, double beta2, double eps = 1e-8);

    void step(const std::vector<Var<T>>& grads);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<Var<T>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long step_ = 0;
};

// Corner-aligned bilinear resize of every channel.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int h, int w);

}  // namespace toad::nn
