#include "toad/nn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "toad/errors.hpp"

namespace toad::nn {

namespace {

thread_local bool g_grad_mode = true;

template <typename T>
using Backward = std::function<std::vector<Var<T>>(const Var<T>&)>;

template <typename T>
Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward<T> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    const bool tracked =
        g_grad_mode && std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (tracked) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (!(a == b)) throw ShapeMismatch(std::string(op) + ": shapes " + a.str() + " and " + b.str() + " differ");
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& a, F f) {
    Tensor<T> out(a.shape());
    const T* src = a.data();
    T* dst = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) dst[i] = f(src[i]);
    return out;
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
    Tensor<T> out(a.shape());
    const T* x = a.data();
    const T* y = b.data();
    T* dst = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) dst[i] = f(x[i], y[i]);
    return out;
}

}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

GradMode::GradMode(bool enabled) : previous_(g_grad_mode) { g_grad_mode = enabled; }
GradMode::~GradMode() { g_grad_mode = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph) {
    std::vector<Var<T>> result;
    result.reserve(inputs.size());
    if (!output.requires_grad()) {
        for (const auto& in : inputs) result.emplace_back(Tensor<T>(in.shape()));
        return result;
    }

    // Post-order DFS over the tracked part of the graph.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(output.node().get(), 0);
    visited.insert(output.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_set<Node<T>*> wanted;
    for (const auto& in : inputs) wanted.insert(in.node().get());

    GradMode mode(create_graph);
    std::unordered_map<Node<T>*, Var<T>> grads;
    grads.emplace(output.node().get(), Var<T>(Tensor<T>(output.shape(), T(1))));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        auto found = grads.find(node);
        if (found == grads.end()) continue;
        if (!node->backward) continue;
        const Var<T> upstream = found->second;
        if (!wanted.count(node)) grads.erase(found);
        auto parent_grads = node->backward(upstream);
        for (std::size_t i = 0; i < node->parents.size(); ++i) {
            Node<T>* parent = node->parents[i].get();
            if (!parent->requires_grad || i >= parent_grads.size() || !parent_grads[i].defined()) continue;
            auto slot = grads.find(parent);
            if (slot == grads.end())
                grads.emplace(parent, std::move(parent_grads[i]));
            else
                slot->second = add(slot->second, parent_grads[i]);
        }
    }

    for (const auto& in : inputs) {
        auto found = grads.find(in.node().get());
        if (found != grads.end())
            result.push_back(found->second);
        else
            result.emplace_back(Tensor<T>(in.shape()));
    }
    return result;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "add");
    return record<T>(map_binary(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                     [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "sub");
    return record<T>(map_binary(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                     [](const Var<T>& g) { return std::vector<Var<T>>{g, scale(g, T(-1))}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "mul");
    return record<T>(map_binary(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                     [a, b](const Var<T>& g) { return std::vector<Var<T>>{mul(g, b), mul(g, a)}; });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    return record<T>(map_unary(a.value(), [factor](T x) { return x * factor; }), {a},
                     [factor](const Var<T>& g) { return std::vector<Var<T>>{scale(g, factor)}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
    return record<T>(map_unary(a.value(), [offset](T x) { return x + offset; }), {a},
                     [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return record<T>(map_unary(a.value(), [](T x) { return x * x; }), {a},
                     [a](const Var<T>& g) { return std::vector<Var<T>>{mul(g, scale(a, T(2)))}; });
}

template <typename T>
Var<T> pow_scalar(const Var<T>& a, T exponent) {
    return record<T>(map_unary(a.value(), [exponent](T x) { return std::pow(x, exponent); }), {a},
                     [a, exponent](const Var<T>& g) {
                         return std::vector<Var<T>>{mul(g, scale(pow_scalar(a, exponent - T(1)), exponent))};
                     });
}

template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& factor) {
    require_same(a.shape(), factor.shape(), "mul_const");
    return record<T>(map_binary(a.value(), factor, [](T x, T y) { return x * y; }), {a},
                     [factor](const Var<T>& g) { return std::vector<Var<T>>{mul_const(g, factor)}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    return mul_const(a, map_unary(a.value(), [slope](T x) { return x > T(0) ? T(1) : slope; }));
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T total = T(0);
    for (T v : a.value().span()) total += v;
    const Shape shape = a.shape();
    return record<T>(Tensor<T>(Shape{}, total), {a},
                     [shape](const Var<T>& g) { return std::vector<Var<T>>{broadcast_scalar(g, shape)}; });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.value().numel()));
}

template <typename T>
Var<T> broadcast_scalar(const Var<T>& s, const Shape& shape) {
    if (s.value().numel() != 1) throw ShapeMismatch("broadcast_scalar expects a scalar");
    return record<T>(Tensor<T>(shape, s.item()), {s},
                     [](const Var<T>& g) { return std::vector<Var<T>>{sum_all(g)}; });
}

template <typename T>
Var<T> sum_nhw(const Var<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(Shape{1, s.c, 1, 1});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = a.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            out[static_cast<std::size_t>(c)] += acc;
        }
    return record<T>(std::move(out), {a}, [s](const Var<T>& g) { return std::vector<Var<T>>{broadcast_nhw(g, s)}; });
}

template <typename T>
Var<T> broadcast_nhw(const Var<T>& v, const Shape& shape) {
    if (!(v.shape() == Shape{1, shape.c, 1, 1})) throw ShapeMismatch("broadcast_nhw expects a 1xCx1x1 tensor");
    Tensor<T> out(shape);
    const std::size_t plane = static_cast<std::size_t>(shape.h) * shape.w;
    for (int n = 0; n < shape.n; ++n)
        for (int c = 0; c < shape.c; ++c) {
            T* p = out.data() + (static_cast<std::size_t>(n) * shape.c + c) * plane;
            std::fill(p, p + plane, v.value()[static_cast<std::size_t>(c)]);
        }
    return record<T>(std::move(out), {v}, [](const Var<T>& g) { return std::vector<Var<T>>{sum_nhw(g)}; });
}

template <typename T>
Var<T> sum_channels(const Var<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        T* dst = out.data() + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < s.c; ++c) {
            const T* src = a.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    }
    const int channels = s.c;
    return record<T>(std::move(out), {a},
                     [channels](const Var<T>& g) { return std::vector<Var<T>>{broadcast_channels(g, channels)}; });
}

template <typename T>
Var<T> broadcast_channels(const Var<T>& v, int channels) {
    const Shape s = v.shape();
    if (s.c != 1) throw ShapeMismatch("broadcast_channels expects a single-channel tensor");
    Tensor<T> out(Shape{s.n, channels, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        const T* src = v.value().data() + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < channels; ++c)
            std::copy(src, src + plane, out.data() + (static_cast<std::size_t>(n) * channels + c) * plane);
    }
    return record<T>(std::move(out), {v}, [](const Var<T>& g) { return std::vector<Var<T>>{sum_channels(g)}; });
}

template <typename T>
Var<T> sum_hw(const Var<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
        const T* p = a.value().data() + nc * plane;
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out[nc] = acc;
    }
    const int h = s.h;
    const int w = s.w;
    return record<T>(std::move(out), {a}, [h, w](const Var<T>& g) { return std::vector<Var<T>>{broadcast_hw(g, h, w)}; });
}

template <typename T>
Var<T> broadcast_hw(const Var<T>& v, int h, int w) {
    const Shape s = v.shape();
    if (s.h != 1 || s.w != 1) throw ShapeMismatch("broadcast_hw expects an NxCx1x1 tensor");
    Tensor<T> out(Shape{s.n, s.c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc)
        std::fill(out.data() + nc * plane, out.data() + (nc + 1) * plane, v.value()[nc]);
    return record<T>(std::move(out), {v}, [](const Var<T>& g) { return std::vector<Var<T>>{sum_hw(g)}; });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight) {
    const int in_h = x.shape().h;
    const int in_w = x.shape().w;
    const int k = weight.shape().h;
    return record<T>(conv2d_forward(x.value(), weight.value()), {x, weight}, [x, weight, in_h, in_w, k](const Var<T>& g) {
        return std::vector<Var<T>>{conv2d_input_grad(g, weight, in_h, in_w), conv2d_weight_grad(x, g, k)};
    });
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& grad_out, const Var<T>& weight, int in_h, int in_w) {
    const int k = weight.shape().h;
    return record<T>(conv2d_backward_input(grad_out.value(), weight.value(), in_h, in_w), {grad_out, weight},
                     [grad_out, weight, k](const Var<T>& g) {
                         return std::vector<Var<T>>{conv2d(g, weight), conv2d_weight_grad(g, grad_out, k)};
                     });
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& grad_out, int kernel) {
    const int in_h = x.shape().h;
    const int in_w = x.shape().w;
    return record<T>(conv2d_backward_weight(x.value(), grad_out.value(), kernel), {x, grad_out},
                     [x, grad_out, in_h, in_w](const Var<T>& g) {
                         return std::vector<Var<T>>{conv2d_input_grad(grad_out, g, in_h, in_w), conv2d(x, g)};
                     });
}

template <typename T>
Var<T> pad2d(const Var<T>& a, int pad) {
    if (pad == 0) return a;
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, s.c, s.h + 2 * pad, s.w + 2 * pad});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h) {
                const T* src = a.value().data() + ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w;
                std::copy(src, src + s.w, &out(n, c, h + pad, pad));
            }
    return record<T>(std::move(out), {a}, [pad](const Var<T>& g) { return std::vector<Var<T>>{crop2d(g, pad)}; });
}

template <typename T>
Var<T> crop2d(const Var<T>& a, int pad) {
    if (pad == 0) return a;
    const Shape s = a.shape();
    if (s.h <= 2 * pad || s.w <= 2 * pad) throw ShapeMismatch("crop larger than tensor " + s.str());
    Tensor<T> out(Shape{s.n, s.c, s.h - 2 * pad, s.w - 2 * pad});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < out.shape().h; ++h) {
                const T* src = a.value().data() + ((static_cast<std::size_t>(n) * s.c + c) * s.h + h + pad) * s.w + pad;
                std::copy(src, src + out.shape().w, &out(n, c, h, 0));
            }
    return record<T>(std::move(out), {a}, [pad](const Var<T>& g) { return std::vector<Var<T>>{pad2d(g, pad)}; });
}

template <typename T>
Var<T> max_pool2(const Var<T>& a) {
    const Shape s = a.shape();
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    if (os.h < 1 || os.w < 1) throw ShapeMismatch("max_pool2 input too small: " + s.str());
    Tensor<T> out(os);
    std::vector<std::size_t> argmax(os.numel());
    std::size_t o = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < os.h; ++h)
                for (int w = 0; w < os.w; ++w, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                ((static_cast<std::size_t>(n) * s.c + c) * s.h + 2 * h + dy) * s.w + 2 * w + dx;
                            if (a.value()[idx] > best) {
                                best = a.value()[idx];
                                best_idx = idx;
                            }
                        }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    return record<T>(std::move(out), {a}, [s, argmax](const Var<T>& g) {
        Tensor<T> dx(s);
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g.value()[i];
        return std::vector<Var<T>>{Var<T>(std::move(dx))};
    });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const Shape s = logits.shape();
    if (s.h != 1 || s.w != 1 || static_cast<std::size_t>(s.n) != labels.size())
        throw ShapeMismatch("cross_entropy expects Nx L x1x1 logits and N labels");
    Tensor<T> dlogits(s);
    double loss = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const T* row = logits.value().data() + static_cast<std::size_t>(n) * s.c;
        const T peak = *std::max_element(row, row + s.c);
        double total = 0.0;
        for (int c = 0; c < s.c; ++c) total += std::exp(static_cast<double>(row[c] - peak));
        const int label = labels[static_cast<std::size_t>(n)];
        if (label < 0 || label >= s.c) throw Error("cross_entropy label out of range");
        loss -= static_cast<double>(row[label] - peak) - std::log(total);
        for (int c = 0; c < s.c; ++c) {
            const double p = std::exp(static_cast<double>(row[c] - peak)) / total;
            dlogits[static_cast<std::size_t>(n) * s.c + c] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) / s.n);
        }
    }
    return record<T>(Tensor<T>(Shape{}, static_cast<T>(loss / s.n)), {logits}, [s, dlogits](const Var<T>& g) {
        return std::vector<Var<T>>{mul_const(broadcast_scalar(g, s), dlogits)};
    });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    return mean_all(square(sub(a, b)));
}

#define TOAD_INSTANTIATE(T)                                                             \
    template class Var<T>;                                                              \
    template std::vector<Var<T>> grad(const Var<T>&, const std::vector<Var<T>>&, bool); \
    template Var<T> add(const Var<T>&, const Var<T>&);                                  \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                  \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                  \
    template Var<T> scale(const Var<T>&, T);                                            \
    template Var<T> add_scalar(const Var<T>&, T);                                       \
    template Var<T> square(const Var<T>&);                                              \
    template Var<T> pow_scalar(const Var<T>&, T);                                       \
    template Var<T> mul_const(const Var<T>&, const Tensor<T>&);                         \
    template Var<T> leaky_relu(const Var<T>&, T);                                       \
    template Var<T> sum_all(const Var<T>&);                                             \
    template Var<T> mean_all(const Var<T>&);                                            \
    template Var<T> broadcast_scalar(const Var<T>&, const Shape&);                      \
    template Var<T> sum_nhw(const Var<T>&);                                             \
    template Var<T> broadcast_nhw(const Var<T>&, const Shape&);                         \
    template Var<T> sum_channels(const Var<T>&);                                        \
    template Var<T> broadcast_channels(const Var<T>&, int);                             \
    template Var<T> sum_hw(const Var<T>&);                                              \
    template Var<T> broadcast_hw(const Var<T>&, int, int);                              \
    template Var<T> conv2d(const Var<T>&, const Var<T>&);                               \
    template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, int, int);          \
    template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, int);              \
    template Var<T> pad2d(const Var<T>&, int);                                          \
    template Var<T> crop2d(const Var<T>&, int);                                         \
    template Var<T> max_pool2(const Var<T>&);                                           \
    template Var<T> cross_entropy(const Var<T>&, const std::vector<int>&);              \
    template Var<T> mse(const Var<T>&, const Var<T>&);

TOAD_INSTANTIATE(float)
TOAD_INSTANTIATE(double)

#undef TOAD_INSTANTIATE

}  // namespace toad::nn
