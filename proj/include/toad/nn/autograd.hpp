#pragma once

// Reverse-mode automatic differentiation over NCHW tensors.
//
// Backward rules are themselves written with differentiable ops, so
// grad(..., create_graph = true) returns gradients that can be differentiated
// again. That is what the critic's gradient penalty needs.

#include <functional>
#include <memory>
#include <vector>

#include "toad/nn/tensor.hpp"

namespace toad::nn {

template <typename T>
class Var;

template <typename T>
struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Maps the gradient of this node to one gradient per parent (undefined
    // entries mean "no contribution").
    std::function<std::vector<Var<T>>(const Var<T>&)> backward;
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    // Mutable access is only meant for leaf parameters (optimizer updates).
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    T item() const { return node_->value.item(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

    // Same value, no history.
    Var detach() const { return Var(node_->value, false); }

private:
    std::shared_ptr<Node<T>> node_;
};

// Graph recording is on by default; Backward passes without create_graph and
// inference code turn it off.
bool grad_mode_enabled();

class GradMode {
public:
    explicit GradMode(bool enabled);
    ~GradMode();
    GradMode(const GradMode&) = delete;
    GradMode& operator=(const GradMode&) = delete;

private:
    bool previous_;
};

class NoGrad : public GradMode {
public:
    NoGrad() : GradMode(false) {}
};

// Gradients of `output` (any shape; seeded with ones) with respect to `inputs`.
// Inputs that are not reached get zero gradients.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph = false);

// Elementwise, equal shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);
template <typename T> Var<T> square(const Var<T>& a);
// a^p, a > 0 where p is not an integer.
template <typename T> Var<T> pow_scalar(const Var<T>& a, T exponent);
template <typename T> Var<T> mul_const(const Var<T>& a, const Tensor<T>& factor);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);

// Reductions and their broadcasting duals.
template <typename T> Var<T> sum_all(const Var<T>& a);                               // -> 1x1x1x1
template <typename T> Var<T> mean_all(const Var<T>& a);
template <typename T> Var<T> broadcast_scalar(const Var<T>& s, const Shape& shape);
template <typename T> Var<T> sum_nhw(const Var<T>& a);                               // -> 1xCx1x1
template <typename T> Var<T> broadcast_nhw(const Var<T>& v, const Shape& shape);
template <typename T> Var<T> sum_channels(const Var<T>& a);                          // -> Nx1xHxW
template <typename T> Var<T> broadcast_channels(const Var<T>& v, int channels);
template <typename T> Var<T> sum_hw(const Var<T>& a);                                // -> NxCx1x1
template <typename T> Var<T> broadcast_hw(const Var<T>& v, int h, int w);

// Convolution family (valid padding, stride 1). Each is differentiable in all
// tensor arguments, and the three are closed under differentiation.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight);
template <typename T> Var<T> conv2d_input_grad(const Var<T>& grad_out, const Var<T>& weight, int in_h, int in_w);
template <typename T> Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& grad_out, int kernel);

template <typename T> Var<T> pad2d(const Var<T>& a, int pad);
template <typename T> Var<T> crop2d(const Var<T>& a, int pad);

// 2x2 max pooling (floor). First-order only.
template <typename T> Var<T> max_pool2(const Var<T>& a);
// Mean cross-entropy of NxLx1x1 logits against labels. First-order only.
template <typename T> Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels);

template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);

}  // namespace toad::nn
