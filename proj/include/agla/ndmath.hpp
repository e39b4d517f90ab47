#pragma once

// Dense 64-bit tensors with define-by-run reverse-mode differentiation and an
// SGD-with-momentum optimizer.
//
// Every op builds a fresh graph node when any input requires a gradient and
// gradient recording is enabled on the calling thread. The graph is owned by
// the result handles, so dropping the root of a forward pass drops its tape.

#include "agla/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace agla {

using Shape = std::vector<std::size_t>;

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    scale,
    matmul,
    relu,
    tanh,
    sigmoid,
    log,
    exp,
    sum,
    mean,
    concat,
    slice,
    softmax_rows,
    log_softmax_rows,
    custom,
};

inline const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::matmul: return "matmul";
        case OpKind::relu: return "relu";
        case OpKind::tanh: return "tanh";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::log: return "log";
        case OpKind::exp: return "exp";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::softmax_rows: return "softmax_rows";
        case OpKind::log_softmax_rows: return "log_softmax_rows";
        case OpKind::custom: return "custom";
    }
    return "?";
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

/// One tape node. `backward` reads this node's grad and accumulates into the parents.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    OpKind op = OpKind::leaf;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Shared handle to a tensor node. Copies alias the same storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) { node_->shape = {0}; }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
        for (std::size_t d : shape)
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        if (data.size() != shape_numel(shape))
            throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_string(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(data), requires_grad);
    }
    static Tensor row(std::span<const double> values, bool requires_grad = false) {
        return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    /// Rows of the 2-D view; rank-1 tensors are row vectors.
    std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return rank() == 1 ? node_->shape[0] : node_->shape[1]; }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    OpKind op() const { return node_->op; }
    bool is_leaf() const { return node_->op == OpKind::leaf; }

    /// Same values, no graph history, no gradient requirement.
    Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

    Tensor clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    /// Builds an op result. Records the parents and backward rule only when a parent
    /// requires a gradient and recording is enabled.
    static Tensor make_result(Shape shape, std::vector<double> data, OpKind kind, std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward) {
        Tensor out;
        out.node_->shape = std::move(shape);
        out.node_->data = std::move(data);
        out.node_->op = kind;
        bool needs = false;
        if (detail::grad_mode())
            for (const Tensor& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->parents.reserve(parents.size());
            for (Tensor& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> dims2(const Tensor& t, const char* op) {
    if (t.rank() > 2)
        throw DimensionError(std::string(op) + ": expected rank <= 2, got " + shape_string(t.shape()));
    return {t.rows(), t.cols()};
}

/// Accumulates `g` into parent `i` when that parent wants a gradient.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    return &p.ensure_grad();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Binary { add, sub, mul };

inline Tensor broadcast_binary(const Tensor& a, const Tensor& b, Binary kind) {
    const OpKind op = kind == Binary::add ? OpKind::add : kind == Binary::sub ? OpKind::sub : OpKind::mul;
    if (a.shape() == b.shape()) {
        std::vector<double> out(a.size());
        const auto x = a.data();
        const auto y = b.data();
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = kind == Binary::add ? x[i] + y[i] : kind == Binary::sub ? x[i] - y[i] : x[i] * y[i];
        return Tensor::make_result(a.shape(), std::move(out), op, {a, b}, [kind](Node& self) {
            const auto& g = self.grad;
            const auto& x = self.parents[0]->data;
            const auto& y = self.parents[1]->data;
            if (auto* ga = parent_grad(self, 0))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += kind == Binary::mul ? g[i] * y[i] : g[i];
            if (auto* gb = parent_grad(self, 1))
                for (std::size_t i = 0; i < g.size(); ++i)
                    (*gb)[i] += kind == Binary::add ? g[i] : kind == Binary::sub ? -g[i] : g[i] * x[i];
        });
    }
    const auto [ar, ac] = dims2(a, op_name(op));
    const auto [br, bc] = dims2(b, op_name(op));
    const bool rows_ok = ar == br || ar == 1 || br == 1;
    const bool cols_ok = ac == bc || ac == 1 || bc == 1;
    if (!rows_ok || !cols_ok)
        throw DimensionError(std::string(op_name(op)) + ": cannot broadcast " + shape_string(a.shape()) + " with " +
                             shape_string(b.shape()));
    const std::size_t r = std::max(ar, br), c = std::max(ac, bc);
    std::vector<double> out(r * c);
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double u = x[(ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j)];
            const double v = y[(br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j)];
            out[i * c + j] = kind == Binary::add ? u + v : kind == Binary::sub ? u - v : u * v;
        }
    return Tensor::make_result({r, c}, std::move(out), op, {a, b}, [=](Node& self) {
        const auto& g = self.grad;
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t ia = (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j);
                const std::size_t ib = (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j);
                const double gij = g[i * c + j];
                if (ga) (*ga)[ia] += kind == Binary::mul ? gij * y[ib] : gij;
                if (gb) (*gb)[ib] += kind == Binary::add ? gij : kind == Binary::sub ? -gij : gij * x[ia];
            }
    });
}

template <class F, class D>
Tensor unary(const Tensor& a, OpKind kind, F f, D dfdx_from_x_y) {
    std::vector<double> out(a.size());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return Tensor::make_result(a.shape(), std::move(out), kind, {a}, [dfdx_from_x_y](Node& self) {
        auto* ga = parent_grad(self, 0);
        if (!ga) return;
        const auto& x = self.parents[0]->data;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            (*ga)[i] += self.grad[i] * dfdx_from_x_y(x[i], self.data[i]);
    });
}

inline double stable_sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::broadcast_binary(a, b, detail::Binary::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::broadcast_binary(a, b, detail::Binary::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::broadcast_binary(a, b, detail::Binary::mul); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Multiplies every entry by a constant.
inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(
        a, OpKind::scale, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto [m, k] = detail::dims2(a, "matmul");
    const auto [k2, n] = detail::dims2(b, "matmul");
    if (k != k2)
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    using detail::RowMat;
    std::vector<double> out(m * n);
    Eigen::Map<RowMat>(out.data(), m, n).noalias() =
        Eigen::Map<const RowMat>(a.data().data(), m, k) * Eigen::Map<const RowMat>(b.data().data(), k, n);
    return Tensor::make_result({m, n}, std::move(out), OpKind::matmul, {a, b}, [m, k, n](detail::Node& self) {
        Eigen::Map<const RowMat> g(self.grad.data(), m, n);
        if (auto* ga = detail::parent_grad(self, 0))
            Eigen::Map<RowMat>(ga->data(), m, k).noalias() +=
                g * Eigen::Map<const RowMat>(self.parents[1]->data.data(), k, n).transpose();
        if (auto* gb = detail::parent_grad(self, 1))
            Eigen::Map<RowMat>(gb->data(), k, n).noalias() +=
                Eigen::Map<const RowMat>(self.parents[0]->data.data(), m, k).transpose() * g;
    });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary(
        a, OpKind::relu, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(
        a, OpKind::tanh, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(a, OpKind::sigmoid, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (!(v > 0)) throw NumericError("log: non-positive input " + std::to_string(v));
    return detail::unary(
        a, OpKind::log, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(
        a, OpKind::exp, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor sum(const Tensor& a) {
    double s = 0;
    for (double v : a.data()) s += v;
    return Tensor::make_result({1}, {s}, OpKind::sum, {a}, [](detail::Node& self) {
        if (auto* ga = detail::parent_grad(self, 0))
            for (double& g : *ga) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    double s = 0;
    for (double v : a.data()) s += v;
    const double n = static_cast<double>(a.size());
    return Tensor::make_result({1}, {s / n}, OpKind::mean, {a}, [n](detail::Node& self) {
        if (auto* ga = detail::parent_grad(self, 0))
            for (double& g : *ga) g += self.grad[0] / n;
    });
}

/// Concatenates 2-D tensors along rows (axis 0) or columns (axis 1).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    for (const Tensor& t : parts) dims.push_back(detail::dims2(t, "concat"));
    std::size_t r = 0, c = 0;
    for (const auto& [pr, pc] : dims) {
        if (axis == 0) {
            if (c == 0) c = pc;
            if (pc != c)
                throw DimensionError("concat: column mismatch " + std::to_string(pc) + " vs " + std::to_string(c));
            r += pr;
        } else {
            if (r == 0) r = pr;
            if (pr != r) throw DimensionError("concat: row mismatch " + std::to_string(pr) + " vs " + std::to_string(r));
            c += pc;
        }
    }
    std::vector<double> out(r * c);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto [pr, pc] = dims[p];
        const auto src = parts[p].data();
        for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
                const std::size_t dst = axis == 0 ? (offset + i) * c + j : i * c + offset + j;
                out[dst] = src[i * pc + j];
            }
        offset += axis == 0 ? pr : pc;
    }
    return Tensor::make_result({r, c}, std::move(out), OpKind::concat, parts, [dims, axis, c](detail::Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < dims.size(); ++p) {
            const auto [pr, pc] = dims[p];
            if (auto* gp = detail::parent_grad(self, p))
                for (std::size_t i = 0; i < pr; ++i)
                    for (std::size_t j = 0; j < pc; ++j) {
                        const std::size_t src = axis == 0 ? (offset + i) * c + j : i * c + offset + j;
                        (*gp)[i * pc + j] += self.grad[src];
                    }
            offset += axis == 0 ? pr : pc;
        }
    });
}

/// Sub-block rows [row_begin, row_end) x cols [col_begin, col_end) of a 2-D tensor.
inline Tensor slice(const Tensor& a, std::size_t row_begin, std::size_t row_end, std::size_t col_begin,
                    std::size_t col_end) {
    const auto [r, c] = detail::dims2(a, "slice");
    if (row_begin >= row_end || row_end > r || col_begin >= col_end || col_end > c)
        throw DimensionError("slice: range rows [" + std::to_string(row_begin) + "," + std::to_string(row_end) +
                             ") cols [" + std::to_string(col_begin) + "," + std::to_string(col_end) +
                             ") outside " + shape_string(a.shape()));
    const std::size_t sr = row_end - row_begin, sc = col_end - col_begin;
    std::vector<double> out(sr * sc);
    const auto src = a.data();
    for (std::size_t i = 0; i < sr; ++i)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((row_begin + i) * c + col_begin), sc,
                    out.begin() + static_cast<std::ptrdiff_t>(i * sc));
    return Tensor::make_result({sr, sc}, std::move(out), OpKind::slice, {a}, [=](detail::Node& self) {
        if (auto* ga = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < sr; ++i)
                for (std::size_t j = 0; j < sc; ++j) (*ga)[(row_begin + i) * c + col_begin + j] += self.grad[i * sc + j];
    });
}

namespace detail {

inline void log_softmax_row(std::span<const double> in, std::span<double> out) {
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0;
    for (double v : in) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] - lse;
}

}  // namespace detail

inline Tensor softmax_rows(const Tensor& a) {
    const auto [r, c] = detail::dims2(a, "softmax_rows");
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        std::span<double> row(out.data() + i * c, c);
        detail::log_softmax_row(a.data().subspan(i * c, c), row);
        for (double& v : row) v = std::exp(v);
    }
    return Tensor::make_result(a.shape(), std::move(out), OpKind::softmax_rows, {a}, [r, c](detail::Node& self) {
        auto* ga = detail::parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.data[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                (*ga)[i * c + j] += self.data[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

inline Tensor log_softmax_rows(const Tensor& a) {
    const auto [r, c] = detail::dims2(a, "log_softmax_rows");
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        detail::log_softmax_row(a.data().subspan(i * c, c), std::span<double>(out.data() + i * c, c));
    return Tensor::make_result(a.shape(), std::move(out), OpKind::log_softmax_rows, {a}, [r, c](detail::Node& self) {
        auto* ga = detail::parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < r; ++i) {
            double gs = 0;
            for (std::size_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                (*ga)[i * c + j] += self.grad[i * c + j] - std::exp(self.data[i * c + j]) * gs;
        }
    });
}

/// Reverse sweep from a scalar root. Leaf gradients accumulate across calls;
/// intermediate gradients are reset on every call.
inline void backward(const Tensor& root) {
    if (root.size() != 1)
        throw ContractError("backward: root must be scalar, got shape " + shape_string(root.shape()));
    const auto& start = root.node();
    if (!start->requires_grad)
        throw ContractError("backward: root does not depend on any tensor that requires grad");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{start.get(), 0}};
    visited.insert(start.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (detail::Node* n : order)
        if (n->op != OpKind::leaf) n->grad.assign(n->data.size(), 0.0);
    start->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

/// FNV-1a over the raw bytes of every tensor's values.
inline std::uint64_t parameter_hash(std::span<const Tensor> params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const Tensor& t : params)
        for (double v : t.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ull;
            }
        }
    return h;
}

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

struct SgdState {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0002;
    std::vector<std::vector<double>> velocity;

    SgdState() = default;
    SgdState(double lr_, double momentum_, double weight_decay_)
        : lr(lr_), momentum(momentum_), weight_decay(weight_decay_) {
        if (!(lr > 0)) throw ParameterError("sgd: learning rate must be positive");
        if (momentum < 0 || momentum >= 1) throw ParameterError("sgd: momentum must lie in [0,1)");
        if (weight_decay < 0) throw ParameterError("sgd: weight decay must be >= 0");
    }
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v. Grads are left in place.
inline void sgd_step(std::span<Tensor> params, SgdState& state) {
    if (state.velocity.empty())
        for (const Tensor& p : params) state.velocity.emplace_back(p.size(), 0.0);
    if (state.velocity.size() != params.size())
        throw ContractError("sgd_step: optimizer state tracks " + std::to_string(state.velocity.size()) +
                            " tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) throw ContractError("sgd_step: parameter " + std::to_string(i) + " has no grad");
        if (state.velocity[i].size() != params[i].size())
            throw ContractError("sgd_step: velocity shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        const auto g = params[i].grad();
        auto& v = state.velocity[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = state.momentum * v[j] + g[j] + state.weight_decay * p[j];
            p[j] -= state.lr * v[j];
        }
    }
}

inline void zero_grads(std::span<Tensor> params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace agla
