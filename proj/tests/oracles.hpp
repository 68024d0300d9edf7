#pragma once

// Test-only oracles, independent of the library's implementation paths:
// dense references, finite differences, and direct re-evaluations.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mixq/graph.hpp"
#include "mixq/tensor.hpp"

namespace oracle {

inline std::vector<double> dense_matmul(const std::vector<double>& a, int64_t m, int64_t k,
                                        const std::vector<double>& b, int64_t n) {
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
            out[static_cast<size_t>(i * n + j)] = acc;
        }
    return out;
}

inline std::vector<int64_t> dense_matmul_int(const std::vector<int64_t>& a, int64_t m, int64_t k,
                                             const std::vector<int64_t>& b, int64_t n) {
    std::vector<int64_t> out(static_cast<size_t>(m * n), 0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            int64_t acc = 0;
            for (int64_t p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
            out[static_cast<size_t>(i * n + j)] = acc;
        }
    return out;
}

inline std::vector<double> csr_to_dense(const mixq::CsrF& a) {
    std::vector<double> d(static_cast<size_t>(a.n_rows * a.n_cols), 0.0);
    for (int64_t r = 0; r < a.n_rows; ++r)
        for (int64_t e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e)
            d[static_cast<size_t>(r * a.n_cols + a.col_idx[e])] = a.values[e];
    return d;
}

inline std::vector<int64_t> csr_to_dense_int(const mixq::CsrI& a) {
    std::vector<int64_t> d(static_cast<size_t>(a.n_rows * a.n_cols), 0);
    for (int64_t r = 0; r < a.n_rows; ++r)
        for (int64_t e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e)
            d[static_cast<size_t>(r * a.n_cols + a.col_idx[e])] = a.values[e];
    return d;
}

// Dense D^{-1/2} (I + A) D^{-1/2}.
inline std::vector<double> dense_gcn_normalize(const std::vector<double>& a, int64_t n) {
    std::vector<double> ia = a;
    for (int64_t i = 0; i < n; ++i) ia[static_cast<size_t>(i * n + i)] += 1.0;
    std::vector<double> dinv(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (int64_t j = 0; j < n; ++j) d += ia[static_cast<size_t>(i * n + j)];
        dinv[static_cast<size_t>(i)] = 1.0 / std::sqrt(d);
    }
    std::vector<double> out(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            out[static_cast<size_t>(i * n + j)] =
                dinv[static_cast<size_t>(i)] * ia[static_cast<size_t>(i * n + j)] * dinv[static_cast<size_t>(j)];
    return out;
}

// Central finite differences of a scalar function with respect to the values
// of one leaf tensor. The loss closure must rebuild its tape on every call.
inline std::vector<double> finite_diff(mixq::Tensor& leaf, const std::function<double()>& loss,
                                       double h = 1e-5) {
    std::vector<double> grad(leaf.values().size());
    for (size_t i = 0; i < grad.size(); ++i) {
        const double saved = leaf.values()[i];
        leaf.values_mut()[i] = saved + h;
        const double up = loss();
        leaf.values_mut()[i] = saved - h;
        const double down = loss();
        leaf.values_mut()[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Autodiff-vs-finite-difference comparison on one leaf. `build_loss` must
// construct a fresh tape from the current leaf values.
inline double gradcheck(mixq::Tensor& leaf, const std::function<mixq::Tensor()>& build_loss, double h = 1e-5) {
    leaf.zero_grad();
    mixq::Tensor loss = build_loss();
    mixq::backward(loss);
    std::vector<double> autodiff = leaf.grad();
    leaf.zero_grad();
    const std::vector<double> fd = finite_diff(leaf, [&] { return build_loss().item(); }, h);
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, rel_err(autodiff[i], fd[i]));
    return worst;
}

}  // namespace oracle
