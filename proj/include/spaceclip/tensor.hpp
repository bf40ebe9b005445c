#pragma once

// Reverse-mode autodiff over dense double tensors.
//
// Every op builds a node holding its value; when gradients are enabled and an
// input participates in differentiation, the node also records its parents and
// a backward closure. Tensor::backward() topologically sorts the graph from a
// scalar root and accumulates gradients into every reachable node that
// requires them. Frozen computations (feature extraction, inference) run with
// a NoGradGuard so intermediates are freed as soon as they go out of scope.

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spaceclip/common.hpp"

namespace spaceclip {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad && grad_mode();
        return Tensor(std::move(n));
    }

    static Tensor from_vector(Shape shape, std::vector<double> data,
                              bool requires_grad = false) {
        SPACECLIP_CHECK(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
                        "tensor data size ", data.size(), " does not match shape ",
                        shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad && grad_mode();
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_vector({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }
    const std::vector<double>& values() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        return *this;
    }

    double* grad_data() {
        node_->ensure_grad();
        return node_->grad.data();
    }
    const std::vector<double>& grad() const { return node_->grad; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double item() const {
        SPACECLIP_CHECK(numel() == 1, "item() requires a scalar tensor, got shape ",
                        shape_str(shape()));
        return node_->value[0];
    }

    /// Value copy that does not participate in differentiation.
    Tensor detach() const {
        auto n = std::make_shared<TensorNode>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

    void backward() {
        SPACECLIP_CHECK(numel() == 1, "backward() requires a scalar root");
        // Topological order over the requires_grad subgraph.
        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> seen;
        std::vector<std::pair<TensorNode*, std::size_t>> stack;
        if (node_->requires_grad) stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                TensorNode* p = n->parents[idx].get();
                ++idx;
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

  private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    if (grad_mode()) {
        for (const auto& p : parents)
            if (p.requires_grad()) rg = true;
    }
    if (rg) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward);
    }
    return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    SPACECLIP_CHECK(a.shape() == b.shape(), op, ": shape mismatch ",
                    shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.values());
    const double* bp = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += bp[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.values());
    const double* bp = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bp[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] -= out.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.values());
    const double* bp = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bp[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                an->grad[i] += out.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                bn->grad[i] += out.grad[i] * an->value[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> v(a.values());
    const double* bp = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] /= bp[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                an->grad[i] += out.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                const double d = bn->value[i];
                bn->grad[i] -= out.grad[i] * an->value[i] / (d * d);
            }
        }
    });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.values());
    for (auto& x : v) x += c;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
    });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.values());
    for (auto& x : v) x *= c;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(v), {a}, [an, c](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += c * out.grad[i];
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return add_scalar(mul_scalar(a, -1.0), c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return mul_scalar(a, 1.0 / c); }

// ---------------------------------------------------------------------------
// Elementwise functions
// ---------------------------------------------------------------------------

inline Tensor log(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = std::log(x);
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            an->grad[i] += out.grad[i] / an->value[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = 1.0 / (1.0 + std::exp(-x));
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            const double y = out.value[i];
            an->grad[i] += out.grad[i] * y * (1.0 - y);
        }
    });
}

/// Smooth nonlinearity used throughout the decoder: x * sigmoid(x).
inline Tensor silu(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = x / (1.0 + std::exp(-x));
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            const double x = an->value[i];
            const double s = 1.0 / (1.0 + std::exp(-x));
            an->grad[i] += out.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

/// sqrt(max(x, 0)); the subgradient at and below zero is zero.
inline Tensor sqrt_clamped(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = x > 0.0 ? std::sqrt(x) : 0.0;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            if (an->value[i] > 0.0)
                an->grad[i] += out.grad[i] * 0.5 / out.value[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    auto an = a.node();
    return detail::make_op({1}, {s}, {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double g = out.grad[0];
        for (auto& x : an->grad) x += g;
    });
}

inline Tensor mean(const Tensor& a) {
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenRowMat>;
using EigenConstMap = Eigen::Map<const EigenRowMat>;

/// (m, k) x (k, n) -> (m, n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    SPACECLIP_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-d tensors");
    SPACECLIP_CHECK(a.dim(1) == b.dim(0), "matmul: inner dims differ, ",
                    shape_str(a.shape()), " vs ", shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> v(static_cast<std::size_t>(m) * n);
    EigenConstMap A(a.data(), m, k), B(b.data(), k, n);
    EigenMap(v.data(), m, n).noalias() = A * B;
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op({m, n}, std::move(v), {a, b},
                           [an, bn, m, k, n](TensorNode& out) {
        EigenConstMap G(out.grad.data(), m, n);
        if (an->requires_grad) {
            an->ensure_grad();
            EigenConstMap B(bn->value.data(), k, n);
            EigenMap(an->grad.data(), m, k).noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            EigenConstMap A(an->value.data(), m, k);
            EigenMap(bn->grad.data(), k, n).noalias() += A.transpose() * G;
        }
    });
}

/// x: (n, in), w: (out, in), b: (out) -> (n, out)
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    SPACECLIP_CHECK(x.ndim() == 2 && w.ndim() == 2, "linear expects 2-d x and w");
    SPACECLIP_CHECK(x.dim(1) == w.dim(1), "linear: input width ", x.dim(1),
                    " does not match weight fan-in ", w.dim(1));
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    SPACECLIP_CHECK(b.numel() == out_dim, "linear: bias size mismatch");
    std::vector<double> v(static_cast<std::size_t>(n) * out_dim);
    {
        EigenConstMap X(x.data(), n, in), W(w.data(), out_dim, in);
        EigenMap Y(v.data(), n, out_dim);
        Y.noalias() = X * W.transpose();
        Eigen::Map<const Eigen::VectorXd> bias(b.data(), out_dim);
        Y.rowwise() += bias.transpose();
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_op({n, out_dim}, std::move(v), {x, w, b},
                           [xn, wn, bn, n, in, out_dim](TensorNode& out) {
        EigenConstMap G(out.grad.data(), n, out_dim);
        if (xn->requires_grad) {
            xn->ensure_grad();
            EigenConstMap W(wn->value.data(), out_dim, in);
            EigenMap(xn->grad.data(), n, in).noalias() += G * W;
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            EigenConstMap X(xn->value.data(), n, in);
            EigenMap(wn->grad.data(), out_dim, in).noalias() += G.transpose() * X;
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            Eigen::Map<Eigen::VectorXd>(bn->grad.data(), out_dim) +=
                G.colwise().sum().transpose();
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

/// Tokens (N, C) in row-major patch order -> grid (C, side, side).
inline Tensor tokens_to_grid(const Tensor& tokens, int side) {
    SPACECLIP_CHECK(tokens.ndim() == 2, "tokens_to_grid expects a 2-d token matrix");
    const int n = tokens.dim(0), c = tokens.dim(1);
    SPACECLIP_CHECK(n == side * side, "tokens_to_grid: token count ", n,
                    " does not equal grid ", side, "x", side);
    std::vector<double> v(static_cast<std::size_t>(n) * c);
    const double* src = tokens.data();
    for (int t = 0; t < n; ++t)
        for (int ch = 0; ch < c; ++ch)
            v[static_cast<std::size_t>(ch) * n + t] = src[static_cast<std::size_t>(t) * c + ch];
    auto tn = tokens.node();
    return detail::make_op({c, side, side}, std::move(v), {tokens},
                           [tn, n, c](TensorNode& out) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (int t = 0; t < n; ++t)
            for (int ch = 0; ch < c; ++ch)
                tn->grad[static_cast<std::size_t>(t) * c + ch] +=
                    out.grad[static_cast<std::size_t>(ch) * n + t];
    });
}

/// Inverse of tokens_to_grid.
inline Tensor grid_to_tokens(const Tensor& grid) {
    SPACECLIP_CHECK(grid.ndim() == 3, "grid_to_tokens expects (C, side, side)");
    const int c = grid.dim(0), side = grid.dim(1);
    SPACECLIP_CHECK(grid.dim(2) == side, "grid_to_tokens expects a square grid");
    const int n = side * side;
    std::vector<double> v(static_cast<std::size_t>(n) * c);
    const double* src = grid.data();
    for (int ch = 0; ch < c; ++ch)
        for (int t = 0; t < n; ++t)
            v[static_cast<std::size_t>(t) * c + ch] = src[static_cast<std::size_t>(ch) * n + t];
    auto gn = grid.node();
    return detail::make_op({n, c}, std::move(v), {grid}, [gn, n, c](TensorNode& out) {
        if (!gn->requires_grad) return;
        gn->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int t = 0; t < n; ++t)
                gn->grad[static_cast<std::size_t>(ch) * n + t] +=
                    out.grad[static_cast<std::size_t>(t) * c + ch];
    });
}

/// Stack same-shaped tensors along a new leading axis.
inline Tensor stack0(const std::vector<Tensor>& parts) {
    SPACECLIP_CHECK(!parts.empty(), "stack0: empty input");
    const Shape inner = parts[0].shape();
    const std::int64_t step = shape_numel(inner);
    Shape out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), inner.begin(), inner.end());
    std::vector<double> v(static_cast<std::size_t>(step) * parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        SPACECLIP_CHECK(parts[i].shape() == inner, "stack0: shape mismatch at item ", i);
        std::memcpy(v.data() + static_cast<std::size_t>(step) * i, parts[i].data(),
                    static_cast<std::size_t>(step) * sizeof(double));
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_op(std::move(out_shape), std::move(v), parts,
                           [nodes, step](TensorNode& out) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i]->requires_grad) continue;
            nodes[i]->ensure_grad();
            const double* g = out.grad.data() + static_cast<std::size_t>(step) * i;
            for (std::int64_t j = 0; j < step; ++j) nodes[i]->grad[static_cast<std::size_t>(j)] += g[j];
        }
    });
}

/// Concatenate (B, C_i, H, W) tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    SPACECLIP_CHECK(!parts.empty(), "concat_channels: empty input");
    const int b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int c_total = 0;
    for (const auto& p : parts) {
        SPACECLIP_CHECK(p.ndim() == 4 && p.dim(0) == b && p.dim(2) == h && p.dim(3) == w,
                        "concat_channels: incompatible shape ", shape_str(p.shape()));
        c_total += p.dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> v(static_cast<std::size_t>(b) * c_total * plane);
    std::vector<int> channels;
    for (const auto& p : parts) channels.push_back(p.dim(1));
    for (int bi = 0; bi < b; ++bi) {
        std::size_t dst_off = static_cast<std::size_t>(bi) * c_total * plane;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const std::size_t n = static_cast<std::size_t>(channels[pi]) * plane;
            std::memcpy(v.data() + dst_off,
                        parts[pi].data() + static_cast<std::size_t>(bi) * n, n * sizeof(double));
            dst_off += n;
        }
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_op({b, c_total, h, w}, std::move(v), parts,
                           [nodes, channels, b, c_total, plane](TensorNode& out) {
        for (int bi = 0; bi < b; ++bi) {
            std::size_t src_off = static_cast<std::size_t>(bi) * c_total * plane;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                const std::size_t n = static_cast<std::size_t>(channels[pi]) * plane;
                if (nodes[pi]->requires_grad) {
                    nodes[pi]->ensure_grad();
                    double* dst = nodes[pi]->grad.data() + static_cast<std::size_t>(bi) * n;
                    const double* g = out.grad.data() + src_off;
                    for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
                }
                src_off += n;
            }
        }
    });
}

/// Slice a 1-d tensor: elements [begin, begin + len).
inline Tensor slice1d(const Tensor& a, int begin, int len) {
    SPACECLIP_CHECK(a.ndim() == 1, "slice1d expects a 1-d tensor");
    SPACECLIP_CHECK(begin >= 0 && begin + len <= a.dim(0), "slice1d out of range");
    std::vector<double> v(a.data() + begin, a.data() + begin + len);
    auto an = a.node();
    return detail::make_op({len}, std::move(v), {a}, [an, begin, len](TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < len; ++i) an->grad[static_cast<std::size_t>(begin + i)] += out.grad[static_cast<std::size_t>(i)];
    });
}

}  // namespace spaceclip
