#pragma once

// Dense tensor with reverse-mode automatic differentiation.
//
// The tape is dynamic: every operation returns a fresh tensor node holding
// references to its parents and a backward closure. Nodes are immutable once
// written; leaves may be mutated in place by the optimizer between passes.
// All reductions run sequentially in a fixed order, so forward results are
// bit-identical across runs with the same inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mixq/common.hpp"

namespace mixq {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(values.size()); }

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw DimensionError("tensor: shape " + shape_str(shape) + " does not match value count " +
                                 std::to_string(values.size()));
        auto node = std::make_shared<TensorNode>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_values({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (double& x : v) x = dist(rng);
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->values; }
    // Leaf mutation hook for optimizers and calibration; op outputs stay immutable.
    std::vector<double>& values_mut() { return node_->values; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& grad_mut() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    double item() const {
        if (numel() != 1) throw InvalidArgument("item: tensor has " + std::to_string(numel()) + " elements");
        return node_->values[0];
    }

    double at(int64_t r, int64_t c) const {
        return node_->values[static_cast<size_t>(r * node_->shape[1] + c)];
    }

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    for (const Tensor& p : parents) {
        node->parents.push_back(p.node_ptr());
        node->requires_grad = node->requires_grad || p.requires_grad();
    }
    if (node->requires_grad) node->backward_fn = std::move(backward);
    return Tensor(std::move(node));
}

// Broadcasting follows the leading-dimension-1 rule: after left-padding the
// smaller shape with 1s, mismatches are allowed only as a prefix of 1s on one
// operand. Under that rule broadcast indexing reduces to flat index modulo
// the operand size.
inline bool leading_broadcastable(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    size_t pad = big.size() - small.size();
    Shape padded(big.size(), 1);
    for (size_t i = 0; i < small.size(); ++i) padded[pad + i] = small[i];
    bool still_leading = true;
    for (size_t i = 0; i < big.size(); ++i) {
        if (padded[i] == big[i]) {
            if (padded[i] != 1) still_leading = false;
            continue;
        }
        if (padded[i] != 1 || !still_leading) return false;
    }
    return true;
}

struct BroadcastPlan {
    Shape out_shape;
    bool a_broadcast = false;
    bool b_broadcast = false;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
    if (a == b) return {a, false, false};
    if (leading_broadcastable(a, b)) return {b, true, false};
    if (leading_broadcastable(b, a)) return {a, false, true};
    throw DimensionError("elementwise: shapes " + shape_str(a) + " and " + shape_str(b) +
                         " are not broadcastable by the leading-1 rule");
}

// Reduce an out-shaped gradient onto a (possibly broadcast) operand.
inline void reduce_into(const std::vector<double>& g, std::vector<double>& dst) {
    const size_t n = dst.size();
    for (size_t i = 0; i < g.size(); ++i) dst[i % n] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    auto plan = broadcast_plan(a.shape(), b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    const size_t an = av.size(), bn = bv.size();
    const size_t n = static_cast<size_t>(shape_numel(plan.out_shape));
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i % an], bv[i % bn]);

    auto an_ptr = a.node_ptr();
    auto bn_ptr = b.node_ptr();
    return make_op(plan.out_shape, std::move(out), {a, b}, [an_ptr, bn_ptr, bwd](TensorNode& self) {
        const auto& g = self.grad;
        const auto& av2 = an_ptr->values;
        const auto& bv2 = bn_ptr->values;
        const size_t an2 = av2.size(), bn2 = bv2.size();
        std::vector<double> ga(an_ptr->requires_grad ? g.size() : 0);
        std::vector<double> gb(bn_ptr->requires_grad ? g.size() : 0);
        for (size_t i = 0; i < g.size(); ++i) {
            double da, db;
            bwd(av2[i % an2], bv2[i % bn2], g[i], da, db);
            if (!ga.empty()) ga[i] = da;
            if (!gb.empty()) gb[i] = db;
        }
        if (!ga.empty()) reduce_into(ga, an_ptr->ensure_grad());
        if (!gb.empty()) reduce_into(gb, bn_ptr->ensure_grad());
    });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    auto xp = x.node_ptr();
    return make_op(x.shape(), std::move(out), {x}, [xp, bwd](TensorNode& self) {
        auto& gx = xp->ensure_grad();
        const auto& g = self.grad;
        const auto& xv2 = xp->values;
        for (size_t i = 0; i < g.size(); ++i) gx[i] += bwd(xv2[i], self.values[i]) * g[i];
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

inline Tensor relu(const Tensor& x) {
    // Subgradient at exactly 0 is defined as 0.
    return detail::unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_op(
        x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

inline Tensor log(const Tensor& x) {
    for (double v : x.values())
        if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
    return detail::unary_op(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor add_scalar(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor mul_scalar(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// Extract a single element as a [1] tensor; backward scatters into that slot.
inline Tensor select(const Tensor& x, int64_t index) {
    if (index < 0 || index >= x.numel()) throw InvalidArgument("select: index out of range");
    auto xp = x.node_ptr();
    return detail::make_op({1}, {x.values()[static_cast<size_t>(index)]}, {x}, [xp, index](TensorNode& self) {
        xp->ensure_grad()[static_cast<size_t>(index)] += self.grad[0];
    });
}

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    auto xp = x.node_ptr();
    return detail::make_op({1}, {acc}, {x}, [xp](TensorNode& self) {
        auto& gx = xp->ensure_grad();
        const double g = self.grad[0];
        for (double& v : gx) v += g;
    });
}

// ---------------------------------------------------------------------------
// Matrix product

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DimensionError("matmul: operands must be 2-D, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            const double aip = av[static_cast<size_t>(i * k + p)];
            if (aip == 0.0) continue;
            const size_t boff = static_cast<size_t>(p * n);
            const size_t ooff = static_cast<size_t>(i * n);
            for (int64_t j = 0; j < n; ++j) out[ooff + j] += aip * bv[boff + j];
        }

    auto ap = a.node_ptr();
    auto bp = b.node_ptr();
    return detail::make_op({m, n}, std::move(out), {a, b}, [ap, bp, m, k, n](TensorNode& self) {
        const auto& g = self.grad;
        const auto& av2 = ap->values;
        const auto& bv2 = bp->values;
        if (ap->requires_grad) {
            auto& ga = ap->ensure_grad();
            // a.grad += g . b^T
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j)
                        acc += g[static_cast<size_t>(i * n + j)] * bv2[static_cast<size_t>(p * n + j)];
                    ga[static_cast<size_t>(i * k + p)] += acc;
                }
        }
        if (bp->requires_grad) {
            auto& gb = bp->ensure_grad();
            // b.grad += a^T . g
            for (int64_t p = 0; p < k; ++p)
                for (int64_t i = 0; i < m; ++i) {
                    const double aip = av2[static_cast<size_t>(i * k + p)];
                    if (aip == 0.0) continue;
                    for (int64_t j = 0; j < n; ++j)
                        gb[static_cast<size_t>(p * n + j)] += aip * g[static_cast<size_t>(i * n + j)];
                }
        }
    });
}

// ---------------------------------------------------------------------------
// Masked softmax cross-entropy

inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels,
                                    const std::vector<uint8_t>& mask) {
    if (logits.shape().size() != 2)
        throw DimensionError("softmax_cross_entropy: logits must be 2-D");
    const int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n || static_cast<int64_t>(mask.size()) != n)
        throw DimensionError("softmax_cross_entropy: labels/mask length must match row count");
    int64_t m = 0;
    for (uint8_t b : mask) m += b ? 1 : 0;
    if (m == 0) throw InvalidArgument("softmax_cross_entropy: empty mask");

    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * c), 0.0);
    const auto& lv = logits.values();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        const int64_t y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= c)
            throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(y) + " out of range at row " +
                                  std::to_string(i));
        const size_t off = static_cast<size_t>(i * c);
        double row_max = lv[off];
        for (int64_t j = 1; j < c; ++j) row_max = std::max(row_max, lv[off + static_cast<size_t>(j)]);
        double denom = 0.0;
        for (int64_t j = 0; j < c; ++j) denom += std::exp(lv[off + static_cast<size_t>(j)] - row_max);
        const double log_denom = std::log(denom);
        for (int64_t j = 0; j < c; ++j)
            (*probs)[off + static_cast<size_t>(j)] = std::exp(lv[off + static_cast<size_t>(j)] - row_max) / denom;
        loss += -(lv[off + static_cast<size_t>(y)] - row_max - log_denom);
    }
    loss /= static_cast<double>(m);

    auto lp = logits.node_ptr();
    auto labels_copy = std::make_shared<std::vector<int64_t>>(labels);
    auto mask_copy = std::make_shared<std::vector<uint8_t>>(mask);
    return detail::make_op({1}, {loss}, {logits}, [lp, probs, labels_copy, mask_copy, n, c, m](TensorNode& self) {
        auto& gl = lp->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(m);
        for (int64_t i = 0; i < n; ++i) {
            if (!(*mask_copy)[static_cast<size_t>(i)]) continue;
            const size_t off = static_cast<size_t>(i * c);
            const int64_t y = (*labels_copy)[static_cast<size_t>(i)];
            for (int64_t j = 0; j < c; ++j) {
                double d = (*probs)[off + static_cast<size_t>(j)];
                if (j == y) d -= 1.0;
                gl[off + static_cast<size_t>(j)] += g * d;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Custom gradient (used for straight-through estimators)

inline Tensor custom_grad(
    const Tensor& x, const std::function<std::vector<double>(const std::vector<double>&)>& forward,
    const std::function<std::vector<double>(const std::vector<double>&, const std::vector<double>&)>&
        backward_override) {
    std::vector<double> out = forward(x.values());
    if (out.size() != x.values().size())
        throw DimensionError("custom_grad: forward changed the element count");
    auto xp = x.node_ptr();
    return detail::make_op(x.shape(), std::move(out), {x}, [xp, backward_override](TensorNode& self) {
        std::vector<double> gin = backward_override(self.grad, xp->values);
        if (gin.size() != xp->values.size())
            throw DimensionError("custom_grad: override returned wrong gradient size");
        auto& gx = xp->ensure_grad();
        for (size_t i = 0; i < gin.size(); ++i) gx[i] += gin[i];
    });
}

// ---------------------------------------------------------------------------
// Backward pass

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw InvalidArgument("backward: loss must be scalar");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; reversed it yields a reverse topological order
    // in which each node is visited exactly once.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* parent = node->parents[idx++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior (op) gradients are scratch state for this pass; only leaves
    // accumulate across repeated backward calls.
    for (TensorNode* node : order)
        if (node->backward_fn) node->grad.clear();

    auto& lg = loss.node()->ensure_grad();
    lg[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// Adam optimizer

class Adam {
public:
    explicit Adam(double lr = 1e-2, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Tensor>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            auto& state = state_[p.node()];
            if (state.m.empty()) {
                state.m.assign(p.values().size(), 0.0);
                state.v.assign(p.values().size(), 0.0);
            }
            auto& values = const_cast<TensorNode*>(p.node())->values;
            const auto& g = p.grad();
            for (size_t i = 0; i < values.size(); ++i) {
                state.m[i] = beta1_ * state.m[i] + (1.0 - beta1_) * g[i];
                state.v[i] = beta2_ * state.v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = state.m[i] / bc1;
                const double vhat = state.v[i] / bc2;
                values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    static void zero_grad(const std::vector<Tensor>& params) {
        for (const Tensor& p : params) const_cast<TensorNode*>(p.node())->grad.clear();
    }

    int64_t step_count() const { return t_; }
    double learning_rate() const { return lr_; }

private:
    struct State {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::unordered_map<const TensorNode*, State> state_;
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace mixq
