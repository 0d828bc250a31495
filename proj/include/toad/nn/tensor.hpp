#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace toad::nn {

// Every tensor is NCHW; scalars are 1x1x1x1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, std::vector<T> data);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator()(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    T operator()(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    T item() const { return data_.at(0); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

private:
    std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * static_cast<std::size_t>(shape_.c) + static_cast<std::size_t>(c)) *
                    static_cast<std::size_t>(shape_.h) +
                static_cast<std::size_t>(h)) *
                   static_cast<std::size_t>(shape_.w) +
               static_cast<std::size_t>(w);
    }

    Shape shape_;
    std::vector<T> data_;
};

// Raw convolution kernels (valid padding, stride 1), shared by the autograd ops.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight);
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, int in_h, int in_w);
template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& grad_out, int kernel);

}  // namespace toad::nn
