#include "toad/nn/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "toad/errors.hpp"

namespace toad::nn {

std::string Shape::str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) throw ShapeMismatch("tensor data does not match shape " + shape_.str());
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// cols has Ci*k*k rows and Ho*Wo columns.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, T* cols) {
    const int ho = h - k + 1;
    const int wo = w - k + 1;
    for (int c = 0; c < channels; ++c) {
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                T* row = cols + (static_cast<std::size_t>((c * k + a) * k + b)) * ho * wo;
                for (int i = 0; i < ho; ++i) {
                    const T* src = x + (static_cast<std::size_t>(c) * h + i + a) * w + b;
                    std::copy(src, src + wo, row + static_cast<std::size_t>(i) * wo);
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int channels, int h, int w, int k, T* x) {
    const int ho = h - k + 1;
    const int wo = w - k + 1;
    for (int c = 0; c < channels; ++c) {
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                const T* row = cols + (static_cast<std::size_t>((c * k + a) * k + b)) * ho * wo;
                for (int i = 0; i < ho; ++i) {
                    T* dst = x + (static_cast<std::size_t>(c) * h + i + a) * w + b;
                    const T* src = row + static_cast<std::size_t>(i) * wo;
                    for (int j = 0; j < wo; ++j) dst[j] += src[j];
                }
            }
        }
    }
}

void check_conv_shapes(const Shape& x, const Shape& weight) {
    if (weight.h != weight.w) throw ShapeMismatch("convolution kernels must be square");
    if (x.c != weight.c)
        throw ShapeMismatch("input has " + std::to_string(x.c) + " channels, kernel expects " + std::to_string(weight.c));
    if (x.h < weight.h || x.w < weight.w)
        throw ShapeMismatch("input " + x.str() + " is smaller than kernel " + weight.str());
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    check_conv_shapes(xs, ws);
    const int k = ws.h;
    const int ho = xs.h - k + 1;
    const int wo = xs.w - k + 1;
    const int kdim = xs.c * k * k;
    const int pix = ho * wo;

    Tensor<T> out(Shape{xs.n, ws.n, ho, wo});
    std::vector<T> cols(static_cast<std::size_t>(kdim) * pix);
    ConstMapMat<T> wmat(weight.data(), ws.n, kdim);
    for (int n = 0; n < xs.n; ++n) {
        im2col(x.data() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, k, cols.data());
        ConstMapMat<T> cmat(cols.data(), kdim, pix);
        MapMat<T> omat(out.data() + static_cast<std::size_t>(n) * ws.n * pix, ws.n, pix);
        omat.noalias() = wmat * cmat;
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, int in_h, int in_w) {
    const auto& gs = grad_out.shape();
    const auto& ws = weight.shape();
    const int k = ws.h;
    if (gs.c != ws.n || gs.h != in_h - k + 1 || gs.w != in_w - k + 1)
        throw ShapeMismatch("gradient " + gs.str() + " does not match kernel " + ws.str());
    const int kdim = ws.c * k * k;
    const int pix = gs.h * gs.w;

    Tensor<T> dx(Shape{gs.n, ws.c, in_h, in_w});
    std::vector<T> cols(static_cast<std::size_t>(kdim) * pix);
    ConstMapMat<T> wmat(weight.data(), ws.n, kdim);
    for (int n = 0; n < gs.n; ++n) {
        ConstMapMat<T> gmat(grad_out.data() + static_cast<std::size_t>(n) * gs.c * pix, gs.c, pix);
        MapMat<T> cmat(cols.data(), kdim, pix);
        cmat.noalias() = wmat.transpose() * gmat;
        col2im_add(cols.data(), ws.c, in_h, in_w, k, dx.data() + static_cast<std::size_t>(n) * ws.c * in_h * in_w);
    }
    return dx;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& grad_out, int kernel) {
    const auto& xs = x.shape();
    const auto& gs = grad_out.shape();
    const int k = kernel;
    if (gs.n != xs.n || gs.h != xs.h - k + 1 || gs.w != xs.w - k + 1)
        throw ShapeMismatch("gradient " + gs.str() + " does not match input " + xs.str());
    const int kdim = xs.c * k * k;
    const int pix = gs.h * gs.w;

    Tensor<T> dw(Shape{gs.c, xs.c, k, k});
    MapMat<T> dmat(dw.data(), gs.c, kdim);
    std::vector<T> cols(static_cast<std::size_t>(kdim) * pix);
    for (int n = 0; n < xs.n; ++n) {
        im2col(x.data() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, k, cols.data());
        ConstMapMat<T> cmat(cols.data(), kdim, pix);
        ConstMapMat<T> gmat(grad_out.data() + static_cast<std::size_t>(n) * gs.c * pix, gs.c, pix);
        dmat.noalias() += gmat * cmat.transpose();
    }
    return dw;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> conv2d_forward(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> conv2d_forward(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> conv2d_backward_input(const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> conv2d_backward_input(const Tensor<double>&, const Tensor<double>&, int, int);
template Tensor<float> conv2d_backward_weight(const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> conv2d_backward_weight(const Tensor<double>&, const Tensor<double>&, int);

}  // namespace toad::nn
