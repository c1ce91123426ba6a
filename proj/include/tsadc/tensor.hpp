// Dense row-major double tensors with reverse-mode automatic differentiation.
//
// Every operation records its inputs and an adjoint closure on the node it
// produces; Tape linearizes the graph reachable from a scalar root in reverse
// topological order and replays the adjoints. Gradients of leaf tensors
// accumulate across backward calls, which is what per-observation batch
// accumulation relies on.
//
// Broadcasting follows the trailing-alignment rule: extents of size 1 stretch
// to match, and the corresponding adjoints sum-reduce over stretched axes.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/rng.hpp"

namespace tsadc {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Thread-local switch: when disabled, ops produce constants (no parents, no
// adjoint closures), which is the inference fast path.
class GradMode {
public:
    static bool& flag() {
        thread_local bool enabled = true;
        return enabled;
    }
    static bool enabled() { return flag(); }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::flag()) { GradMode::flag() = false; }
    ~NoGradGuard() { GradMode::flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        node_ = std::make_shared<detail::Node>();
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor full(Shape shape, double v) {
        std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        std::size_t n = numel(shape);
        std::vector<double> d(n);
        for (auto& x : d) x = mean + stddev * rng.normal();
        return Tensor(std::move(shape), std::move(d));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    const std::vector<double>& values() const { return node_->value; }
    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    // Direct value access for leaf updates (optimizer); must not be used on
    // tensors that participate in a live tape.
    std::vector<double>& mutable_values() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        return *this;
    }

    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    Tensor detach() const {
        Tensor t(node_->shape, node_->value);
        return t;
    }

    detail::Node* node() const { return node_.get(); }
    const detail::NodePtr& node_ptr() const { return node_; }

private:
    detail::NodePtr node_;
};

namespace detail {

// Builds the result node of an op. `parents` lists the differentiable inputs
// used for traversal; `backward` accumulates into their grads.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                      std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(value));
    bool any_grad = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents)
            if (p && p->requires_grad) any_grad = true;
    }
    if (any_grad) {
        Node* n = out.node();
        n->requires_grad = true;
        for (auto& p : parents)
            if (p && p->requires_grad) n->parents.push_back(p);
        n->backward = std::move(backward);
    }
    return out;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Row-major element strides of `s` aligned to broadcast result `out`,
// with stride 0 on stretched axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t acc = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t d = s.size() - 1 - i;            // axis in s
        const std::size_t od = out.size() - 1 - i;         // aligned axis in out
        strides[od] = (s[d] == 1 && out[od] != 1) ? 0 : acc;
        acc *= s[d];
    }
    return strides;
}

// Walks the broadcast result space calling fn(out_index, a_index, b_index).
template <class Fn>
inline void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                               const std::vector<std::size_t>& sb, Fn&& fn) {
    const std::size_t n = numel(out);
    const std::size_t r = out.size();
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

enum class EwOp { Add, Sub, Mul, Div };

namespace detail {

template <class FwdFn, class BwdFn>
inline Tensor binary_ew(const Tensor& a, const Tensor& b, FwdFn fwd, BwdFn bwd) {
    const Shape os = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = numel(os);
    std::vector<double> out(n);
    const double* av = a.values().data();
    const double* bv = b.values().data();

    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        auto sa = broadcast_strides(a.shape(), os);
        auto sb = broadcast_strides(b.shape(), os);
        for_each_broadcast(os, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            out[i] = fwd(av[ia], bv[ib]);
        });
    }

    NodePtr pa = a.node_ptr(), pb = b.node_ptr();
    Shape osc = os;
    return make_op(std::move(osc), std::move(out), {pa, pb}, [pa, pb, os, bwd](Node& o) {
        const bool ga = pa->requires_grad, gb = pb->requires_grad;
        if (ga) pa->ensure_grad();
        if (gb) pb->ensure_grad();
        const double* av = pa->value.data();
        const double* bv = pb->value.data();
        const double* g = o.grad.data();
        if (pa->shape == pb->shape) {
            const std::size_t n = o.value.size();
            for (std::size_t i = 0; i < n; ++i) {
                auto [da, db] = bwd(av[i], bv[i]);
                if (ga) pa->grad[i] += g[i] * da;
                if (gb) pb->grad[i] += g[i] * db;
            }
        } else {
            auto sa = broadcast_strides(pa->shape, os);
            auto sb = broadcast_strides(pb->shape, os);
            for_each_broadcast(os, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                auto [da, db] = bwd(av[ia], bv[ib]);
                if (ga) pa->grad[ia] += g[i] * da;
                if (gb) pb->grad[ib] += g[i] * db;
            });
        }
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x + y; },
        [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x - y; },
        [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y) { return std::pair<double, double>{y, x}; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y) { return std::pair<double, double>{1.0 / y, -x / (y * y)}; });
}

inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
    switch (op) {
        case EwOp::Add: return add(a, b);
        case EwOp::Sub: return sub(a, b);
        case EwOp::Mul: return mul(a, b);
        case EwOp::Div: return div(a, b);
    }
    throw ContractError("unknown elementwise op kind");
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// Scalar variants avoid materializing constant tensors in hot paths.
namespace detail {

template <class FwdFn, class BwdFn>
inline Tensor unary_ew(const Tensor& x, FwdFn fwd, BwdFn bwd) {
    const std::size_t n = x.size();
    std::vector<double> out(n);
    const double* xv = x.values().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
    NodePtr px = x.node_ptr();
    return make_op(Shape(x.shape()), std::move(out), {px}, [px, bwd](Node& o) {
        px->ensure_grad();
        const double* xv = px->value.data();
        const double* ov = o.value.data();
        const double* g = o.grad.data();
        double* gx = px->grad.data();
        const std::size_t n = o.value.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * bwd(xv[i], ov[i]);
    });
}

}  // namespace detail

inline Tensor add_scalar(const Tensor& x, double c) {
    return detail::unary_ew(
        x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& x, double c) {
    return detail::unary_ew(
        x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

inline Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

inline Tensor exp(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return std::exp(v); }, [](double, double o) { return o; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return std::sqrt(v); },
        [](double, double o) { return 0.5 / o; });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return std::tanh(v); },
        [](double, double o) { return 1.0 - o * o; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double o) { return o * (1.0 - o); });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor silu(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

inline Tensor square(const Tensor& x) {
    return detail::unary_ew(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Clamp with pass-through gradient strictly inside (lo, hi).
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    return detail::unary_ew(
        x, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Matrix multiplication (batched, broadcast over leading extents)
// ---------------------------------------------------------------------------

namespace detail {

inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
    // c (m,n) += a (m,k) * b (k,n)
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                        std::size_t k) {
    // c (m,k) += g (m,n) * b^T, b is (k,n)
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

inline void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    // c (k,n) += a^T * g, a is (m,k), g is (m,n)
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const std::size_t m = as[as.size() - 2], k = as[as.size() - 1];
    const std::size_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != k2)
        throw ShapeError("matmul inner extents disagree: " + shape_str(as) + " vs " +
                         shape_str(bs));

    const Shape abatch(as.begin(), as.end() - 2);
    const Shape bbatch(bs.begin(), bs.end() - 2);
    const Shape batch = detail::broadcast_shape(abatch, bbatch);
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);

    const std::size_t nbatch = numel(batch);
    std::vector<double> out(nbatch * m * n, 0.0);
    const auto sa = detail::broadcast_strides(abatch, batch);
    const auto sb = detail::broadcast_strides(bbatch, batch);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    detail::for_each_broadcast(batch, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        detail::gemm_acc(av + ia * m * k, bv + ib * k * n, out.data() + i * m * n, m, k, n);
    });

    detail::NodePtr pa = a.node_ptr(), pb = b.node_ptr();
    return detail::make_op(
        std::move(os), std::move(out), {pa, pb},
        [pa, pb, batch, sa, sb, m, k, n](detail::Node& o) {
            const bool ga = pa->requires_grad, gb = pb->requires_grad;
            if (ga) pa->ensure_grad();
            if (gb) pb->ensure_grad();
            const double* av = pa->value.data();
            const double* bv = pb->value.data();
            const double* g = o.grad.data();
            detail::for_each_broadcast(
                batch, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (ga)
                        detail::gemm_nt_acc(g + i * m * n, bv + ib * k * n,
                                            pa->grad.data() + ia * m * k, m, n, k);
                    if (gb)
                        detail::gemm_tn_acc(av + ia * m * k, g + i * m * n,
                                            pb->grad.data() + ib * k * n, m, k, n);
                });
        });
}

// Swap the last two axes.
inline Tensor transpose(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("transpose requires rank >= 2");
    const Shape& s = x.shape();
    const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
    Shape os = s;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    const std::size_t nbatch = x.size() / (m * n);
    std::vector<double> out(x.size());
    const double* xv = x.values().data();
    for (std::size_t b = 0; b < nbatch; ++b)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[b * m * n + j * m + i] = xv[b * m * n + i * n + j];
    detail::NodePtr px = x.node_ptr();
    return detail::make_op(std::move(os), std::move(out), {px}, [px, m, n, nbatch](detail::Node& o) {
        px->ensure_grad();
        const double* g = o.grad.data();
        double* gx = px->grad.data();
        for (std::size_t b = 0; b < nbatch; ++b)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    gx[b * m * n + i * n + j] += g[b * m * n + j * m + i];
    });
}

// ---------------------------------------------------------------------------
// Shape movement
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    detail::NodePtr px = x.node_ptr();
    return detail::make_op(std::move(shape), std::vector<double>(x.values()), {px},
                           [px](detail::Node& o) {
                               px->ensure_grad();
                               const std::size_t n = o.value.size();
                               for (std::size_t i = 0; i < n; ++i) px->grad[i] += o.grad[i];
                           });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("slice axis out of range");
    if (start + len > s[axis]) throw ShapeError("slice window exceeds extent");
    Shape os = s;
    os[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    std::vector<double> out(numel(os));
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, xv + (o * s[axis] + start) * inner,
                    len * inner * sizeof(double));
    detail::NodePtr px = x.node_ptr();
    const std::size_t extent = s[axis];
    return detail::make_op(std::move(os), std::move(out), {px},
                           [px, outer, inner, len, start, extent](detail::Node& o) {
                               px->ensure_grad();
                               const double* g = o.grad.data();
                               double* gx = px->grad.data();
                               for (std::size_t ot = 0; ot < outer; ++ot) {
                                   double* dst = gx + (ot * extent + start) * inner;
                                   const double* src = g + ot * len * inner;
                                   for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                               }
                           });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw ShapeError("concat extent mismatch off the concat axis");
        total += s[axis];
    }
    Shape os = s0;
    os[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    std::vector<double> out(numel(os));
    std::size_t offset = 0;
    std::vector<std::size_t> extents;
    std::vector<detail::NodePtr> nodes;
    for (const auto& p : parts) {
        const std::size_t e = p.shape()[axis];
        const double* pv = p.values().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total + offset) * inner, pv + o * e * inner,
                        e * inner * sizeof(double));
        offset += e;
        extents.push_back(e);
        nodes.push_back(p.node_ptr());
    }
    return detail::make_op(std::move(os), std::move(out), nodes,
                           [nodes, extents, outer, inner, total](detail::Node& o) {
                               const double* g = o.grad.data();
                               std::size_t off = 0;
                               for (std::size_t t = 0; t < nodes.size(); ++t) {
                                   const std::size_t e = extents[t];
                                   if (nodes[t]->requires_grad) {
                                       nodes[t]->ensure_grad();
                                       double* gx = nodes[t]->grad.data();
                                       for (std::size_t ot = 0; ot < outer; ++ot) {
                                           const double* src = g + (ot * total + off) * inner;
                                           double* dst = gx + ot * e * inner;
                                           for (std::size_t i = 0; i < e * inner; ++i)
                                               dst[i] += src[i];
                                       }
                                   }
                                   off += e;
                               }
                           });
}

// Stack same-shape tensors along a new leading axis.
inline Tensor stack0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("stack of zero tensors");
    std::vector<Tensor> lifted;
    lifted.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin(), 1);
        lifted.push_back(reshape(p, s));
    }
    return concat(lifted, 0);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    detail::NodePtr px = x.node_ptr();
    return detail::make_op({1}, {acc}, {px}, [px](detail::Node& o) {
        px->ensure_grad();
        const double g = o.grad[0];
        for (auto& gv : px->grad) gv += g;
    });
}

inline Tensor mean_all(const Tensor& x) { return mul_scalar(sum_all(x), 1.0 / double(x.size())); }

inline Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("sum_axis axis out of range");
    std::size_t outer = 1, inner = 1;
    const std::size_t extent = s[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape os;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i == axis) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(s[i]);
        }
    }
    if (os.empty()) os.push_back(1);
    std::vector<double> out(outer * inner, 0.0);
    const double* xv = x.values().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < extent; ++e) {
            const double* src = xv + (o * extent + e) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    detail::NodePtr px = x.node_ptr();
    return detail::make_op(std::move(os), std::move(out), {px},
                           [px, outer, inner, extent](detail::Node& o) {
                               px->ensure_grad();
                               const double* g = o.grad.data();
                               double* gx = px->grad.data();
                               for (std::size_t ot = 0; ot < outer; ++ot)
                                   for (std::size_t e = 0; e < extent; ++e) {
                                       double* dst = gx + (ot * extent + e) * inner;
                                       const double* src = g + ot * inner;
                                       for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                                   }
                           });
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false) {
    const double inv = 1.0 / double(x.shape()[axis]);
    return mul_scalar(sum_axis(x, axis, keepdim), inv);
}

// ---------------------------------------------------------------------------
// Row softmax over the trailing axis (max-subtracted for stability)
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("softmax_rows requires rank >= 1");
    for (double v : x.values())
        if (std::isnan(v)) throw NumericError("softmax_rows input contains NaN");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    const double* xv = x.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv + r * n;
        double* orow = out.data() + r * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= denom;
    }
    detail::NodePtr px = x.node_ptr();
    return detail::make_op(Shape(x.shape()), std::move(out), {px}, [px, rows, n](detail::Node& o) {
        px->ensure_grad();
        const double* p = o.value.data();
        const double* g = o.grad.data();
        double* gx = px->grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* prow = p + r * n;
            const double* grow = g + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += prow[j] * grow[j];
            double* gxrow = gx + r * n;
            for (std::size_t j = 0; j < n; ++j) gxrow[j] += prow[j] * (grow[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Tape: linearized record of the graph reachable from a scalar root
// ---------------------------------------------------------------------------

class Tape {
public:
    explicit Tape(const Tensor& root) : root_(root.node_ptr()) {
        if (!root.defined()) throw ContractError("backward on undefined tensor");
        if (root.size() != 1)
            throw ContractError("backward requires a scalar root, got " + shape_str(root.shape()));
        if (!root_->requires_grad) return;
        // Iterative post-order DFS; parents precede children in order_.
        std::unordered_set<detail::Node*> visited;
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        visited.insert(root_.get());
        stack.emplace_back(root_.get(), 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* p = node->parents[next++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order_.push_back(node);
                stack.pop_back();
            }
        }
    }

    // Accumulates `seed` * d(root)/d(leaf) into every reachable leaf's grad.
    void replay(double seed = 1.0) {
        if (order_.empty()) return;
        for (detail::Node* n : order_) n->ensure_grad();
        root_->grad[0] += seed;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it)
            if ((*it)->backward) (*it)->backward(**it);
    }

    std::size_t num_nodes() const { return order_.size(); }

private:
    detail::NodePtr root_;
    std::vector<detail::Node*> order_;
};

inline void backward(const Tensor& root, double seed = 1.0) { Tape(root).replay(seed); }

// ---------------------------------------------------------------------------
// Adam optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Applies one bias-corrected update. Params must be passed in a stable
    // order; moment slots are keyed by position.
    void step(std::vector<Tensor>& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].size(), 0.0);
                v_[i].assign(params[i].size(), 0.0);
            }
        }
        if (m_.size() != params.size())
            throw ShapeError("optimizer state tracks " + std::to_string(m_.size()) +
                             " params, got " + std::to_string(params.size()));
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = params[i];
            const std::vector<double>& g = p.grad();
            if (g.size() != p.size() || m_[i].size() != p.size())
                throw ShapeError("gradient/moment shape mismatch for param " + std::to_string(i));
            double* val = p.mutable_values().data();
            double* m = m_[i].data();
            double* v = v_[i].data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grad(std::vector<Tensor>& params) {
        for (auto& p : params) p.zero_grad();
    }

    long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace tsadc
