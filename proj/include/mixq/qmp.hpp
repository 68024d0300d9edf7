#pragma once

// Quantized message passing: integer sparse-dense aggregation plus the fused
// affine correction that reproduces the fake-quantized result exactly from
// integer operands,
//
//     Q_y(AX) = C1 (.) Q_a(A) Q_x(X) (.) C2 + C3.
//
// Convention: an affine quantizer maps the zero entries of A onto Z_a, so the
// dense quantized adjacency is not sparse when Z_a != 0. The kernel therefore
// multiplies with the zero-point-corrected integers Q_a(A) - Z_a, which share
// A's sparsity pattern exactly. Under that substitution the Z_a-dependent
// rank-1 terms of C3 cancel identically and the correction reduces to
//
//     C3 = -((Q_a(A) - Z_a) (.) S_a) 1 (Z_x (.) S_x)^T (/) S_y + Z_y,
//
// one rank-1 term plus the output zero point, kept factored (row and column
// vectors) and applied on the fly.
//
// Granularity contract: adjacency scales are per-row or per-tensor; feature
// and output scales are per-column or per-tensor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "mixq/common.hpp"
#include "mixq/graph.hpp"
#include "mixq/quantize.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

namespace detail {

inline double bcast(const std::vector<double>& v, int64_t i) {
    return v.size() == 1 ? v[0] : v[static_cast<size_t>(i)];
}

inline int64_t bcast_zint(const QuantParams& p, int64_t i) {
    return p.zero.size() == 1 ? p.zero_int(0) : p.zero_int(i);
}

inline int64_t max_abs(const std::vector<int64_t>& v) {
    int64_t m = 0;
    for (int64_t x : v) m = std::max(m, std::abs(x));
    return m;
}

inline void check_accumulator(int64_t terms, int64_t max_a, int64_t max_b, const char* what) {
    const __int128 bound = static_cast<__int128>(terms) * max_a * max_b;
    if (bound > static_cast<__int128>(std::numeric_limits<int64_t>::max()))
        throw AccumulatorOverflow(std::string(what) + ": predicted 64-bit accumulator overflow");
}

}  // namespace detail

// Exact integer sparse-dense product Q_a(A) . Q_x(X) with 64-bit accumulators.
// The overflow bound is checked at entry from max row nnz and operand ranges.
inline std::vector<int64_t> spmm_int(const CsrI& qa, const std::vector<int64_t>& qx, int64_t f) {
    if (static_cast<int64_t>(qx.size()) != qa.n_cols * f)
        throw DimensionError("spmm_int: dense operand size mismatch");
    int64_t max_row_nnz = 0;
    for (int64_t r = 0; r < qa.n_rows; ++r)
        max_row_nnz = std::max(max_row_nnz, qa.row_ptr[r + 1] - qa.row_ptr[r]);
    detail::check_accumulator(std::max<int64_t>(max_row_nnz, 1), detail::max_abs(qa.values), detail::max_abs(qx),
                              "spmm_int");

    std::vector<int64_t> out(static_cast<size_t>(qa.n_rows * f), 0);
    for (int64_t r = 0; r < qa.n_rows; ++r) {
        const size_t ooff = static_cast<size_t>(r * f);
        for (int64_t e = qa.row_ptr[r]; e < qa.row_ptr[r + 1]; ++e) {
            const int64_t w = qa.values[e];
            if (w == 0) continue;
            const size_t xoff = static_cast<size_t>(qa.col_idx[e] * f);
            for (int64_t j = 0; j < f; ++j) out[ooff + static_cast<size_t>(j)] += w * qx[xoff + static_cast<size_t>(j)];
        }
    }
    return out;
}

// Exact integer dense product with the same overflow discipline.
inline std::vector<int64_t> matmul_int(const std::vector<int64_t>& a, int64_t m, int64_t k,
                                       const std::vector<int64_t>& b, int64_t n) {
    if (static_cast<int64_t>(a.size()) != m * k || static_cast<int64_t>(b.size()) != k * n)
        throw DimensionError("matmul_int: operand size mismatch");
    detail::check_accumulator(std::max<int64_t>(k, 1), detail::max_abs(a), detail::max_abs(b), "matmul_int");
    std::vector<int64_t> out(static_cast<size_t>(m * n), 0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            const int64_t aip = a[static_cast<size_t>(i * k + p)];
            if (aip == 0) continue;
            const size_t boff = static_cast<size_t>(p * n);
            const size_t ooff = static_cast<size_t>(i * n);
            for (int64_t j = 0; j < n; ++j) out[ooff + static_cast<size_t>(j)] += aip * b[boff + static_cast<size_t>(j)];
        }
    return out;
}

struct FusedConstants {
    std::vector<double> c1;  // per output row: S_a
    std::vector<double> c2;  // per output column: S_x / S_y
    std::vector<double> u1;  // row factor of the C3 rank-1 term
    std::vector<double> v1;  // column factor (already divided by S_y)
    std::vector<double> zy;  // rounded output zero point per column

    double c3(int64_t i, int64_t j) const {
        return u1[static_cast<size_t>(i)] * v1[static_cast<size_t>(j)] + zy[static_cast<size_t>(j)];
    }
};

// Zero-point-corrected adjacency integers, the operand of the integer spmm.
inline CsrI shift_adjacency(const CsrI& qa, const QuantParams& pa) {
    CsrI out = qa;
    for (int64_t r = 0; r < out.n_rows; ++r) {
        const int64_t za = detail::bcast_zint(pa, r);
        if (za == 0) continue;
        for (int64_t e = out.row_ptr[r]; e < out.row_ptr[r + 1]; ++e) out.values[e] -= za;
    }
    return out;
}

// Assemble C1, C2 and the factored C3 for the shifted-operand product. The
// adjacency-dependent row sums depend on Q_a(A) only and are reusable across
// forwards; nothing here depends on Q_x(X).
inline FusedConstants fuse_constants(const QuantParams& pa, const QuantParams& px, const QuantParams& py,
                                     const CsrI& qa, int64_t f) {
    pa.validate();
    px.validate();
    py.validate();
    const int64_t n = qa.n_rows;
    if (static_cast<int64_t>(pa.scale.size()) != 1 && static_cast<int64_t>(pa.scale.size()) != n)
        throw InvalidArgument("fuse_constants: adjacency scales must be per-row or per-tensor");
    if (static_cast<int64_t>(px.scale.size()) != 1 && static_cast<int64_t>(px.scale.size()) != f)
        throw InvalidArgument("fuse_constants: feature scales must be per-column or per-tensor");
    if (static_cast<int64_t>(py.scale.size()) != 1 && static_cast<int64_t>(py.scale.size()) != f)
        throw InvalidArgument("fuse_constants: output scales must be per-column or per-tensor");

    FusedConstants fc;
    fc.c1.resize(static_cast<size_t>(n));
    fc.u1.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double sa = detail::bcast(pa.scale, i);
        const int64_t za = detail::bcast_zint(pa, i);
        int64_t rowsum = 0;
        for (int64_t e = qa.row_ptr[i]; e < qa.row_ptr[i + 1]; ++e) rowsum += qa.values[e] - za;
        fc.c1[static_cast<size_t>(i)] = sa;
        fc.u1[static_cast<size_t>(i)] = -sa * static_cast<double>(rowsum);
    }

    fc.c2.resize(static_cast<size_t>(f));
    fc.v1.resize(static_cast<size_t>(f));
    fc.zy.resize(static_cast<size_t>(f));
    for (int64_t j = 0; j < f; ++j) {
        const double sx = detail::bcast(px.scale, j);
        const double zx = static_cast<double>(detail::bcast_zint(px, j));
        const double sy = detail::bcast(py.scale, j);
        fc.c2[static_cast<size_t>(j)] = sx / sy;
        fc.v1[static_cast<size_t>(j)] = zx * sx / sy;
        fc.zy[static_cast<size_t>(j)] = static_cast<double>(detail::bcast_zint(py, j));
    }
    return fc;
}

// The rescaled aggregation C1 (.) P (.) C2 + C3 before output rounding. With
// identity output parameters (S_y = 1, Z_y = 0) this already equals the
// fake-quantized product and needs no re-quantization.
inline std::vector<double> aggregate_rescale(const std::vector<int64_t>& p, int64_t n, int64_t f,
                                             const FusedConstants& fc) {
    std::vector<double> out(static_cast<size_t>(n * f));
    for (int64_t i = 0; i < n; ++i) {
        const double c1 = fc.c1[static_cast<size_t>(i)];
        const size_t off = static_cast<size_t>(i * f);
        for (int64_t j = 0; j < f; ++j)
            out[off + static_cast<size_t>(j)] = c1 * static_cast<double>(p[off + static_cast<size_t>(j)]) *
                                                    fc.c2[static_cast<size_t>(j)] +
                                                fc.c3(i, j);
    }
    return out;
}

struct QuantizedAggregation {
    std::shared_ptr<const CsrI> qa;
    QuantParams params_a, params_x, params_y;
    bool identity_output = false;  // skip output rounding; semantically S_y=1, Z_y=0
};

// Quantize real adjacency values into integer CSR form.
inline CsrI quantize_adjacency(const CsrF& a, const QuantParams& pa, Granularity gran) {
    CsrI out;
    out.n_rows = a.n_rows;
    out.n_cols = a.n_cols;
    out.row_ptr = a.row_ptr;
    out.col_idx = a.col_idx;
    out.values = quantize(a.values, pa, Slicing::csr(gran, a));
    return out;
}

// Integer message passing for one aggregation: spmm in 64-bit integers over
// the zero-point-corrected operands, then the fused affine correction, then
// round-and-clip into the output range.
inline std::vector<double> quantized_aggregate_identity(const QuantizedAggregation& agg,
                                                        const std::vector<int64_t>& qx, int64_t f) {
    QuantParams identity;
    identity.bits = 32;
    identity.is_signed = true;
    identity.scale = {1.0};
    identity.zero = {0.0};
    const CsrI qa_s = shift_adjacency(*agg.qa, agg.params_a);
    const std::vector<int64_t> p = spmm_int(qa_s, qx, f);
    const FusedConstants fc = fuse_constants(agg.params_a, agg.params_x, identity, *agg.qa, f);
    return aggregate_rescale(p, agg.qa->n_rows, f, fc);
}

inline std::vector<int64_t> quantized_aggregate(const QuantizedAggregation& agg, const std::vector<int64_t>& qx,
                                                int64_t f) {
    if (agg.identity_output)
        throw StateError("quantized_aggregate: identity-output aggregations produce real values; "
                         "use quantized_aggregate_identity");
    const CsrI qa_s = shift_adjacency(*agg.qa, agg.params_a);
    const std::vector<int64_t> p = spmm_int(qa_s, qx, f);
    const FusedConstants fc = fuse_constants(agg.params_a, agg.params_x, agg.params_y, *agg.qa, f);
    const std::vector<double> r = aggregate_rescale(p, agg.qa->n_rows, f, fc);
    const auto [lo, hi] = qrange(agg.params_y.bits, agg.params_y.is_signed);
    std::vector<int64_t> out(r.size());
    for (size_t i = 0; i < r.size(); ++i) {
        const double q = round_half_even(r[i]);
        out[i] = static_cast<int64_t>(std::clamp(q, static_cast<double>(lo), static_cast<double>(hi)));
    }
    return out;
}

// Simulated-quantization message passing Q^f_y(Q^f_a(A) Q^f_x(X)); the
// training-time counterpart of quantized_aggregate. Gradients reach x, the
// quantizer parameters, and the adjacency values tensor when it is learnable.
// Passing qy == nullptr selects identity-output mode.
inline Tensor fake_quantized_aggregate(CsrPtr a, const Tensor& a_values, const Tensor& x, const Quantizer& qa,
                                       const Quantizer& qx, const Quantizer* qy) {
    const Tensor a_fq = fake_quantize(qa, a_values, Slicing::csr(qa.gran, *a));
    const Tensor x_fq = fake_quantize(qx, x, Slicing::dense(qx.gran, x.dim(0), x.dim(1)));
    Tensor y = spmm_values_tensor(a, a_fq, x_fq);
    if (qy == nullptr) return y;
    return fake_quantize(*qy, y, Slicing::dense(qy->gran, y.dim(0), y.dim(1)));
}

inline Tensor fake_quantized_aggregate(CsrPtr a, const Tensor& x, const Quantizer& qa, const Quantizer& qx,
                                       const Quantizer* qy) {
    Tensor a_values = Tensor::from_values({a->nnz()}, a->values);
    return fake_quantized_aggregate(a, a_values, x, qa, qx, qy);
}

// ---------------------------------------------------------------------------
// Dense analogue for quantized linear transforms (per-tensor scales on both
// operands): S_h S_w (Hq Wq - Z_h 1 colsum(Wq)^T - rowsum(Hq) Z_w 1^T + k Z_h Z_w).

inline std::vector<double> quantized_linear_real(const std::vector<int64_t>& hq, int64_t m, int64_t k,
                                                 const QuantParams& ph, const std::vector<int64_t>& wq, int64_t n,
                                                 const QuantParams& pw) {
    if (ph.scale.size() != 1 || pw.scale.size() != 1)
        throw InvalidArgument("quantized_linear: per-tensor operand scales required");
    const std::vector<int64_t> p = matmul_int(hq, m, k, wq, n);
    const int64_t zh = ph.zero_int(0), zw = pw.zero_int(0);
    const double sh = ph.scale[0], sw = pw.scale[0];

    std::vector<int64_t> col_w(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < n; ++j) col_w[static_cast<size_t>(j)] += wq[static_cast<size_t>(i * n + j)];
    std::vector<int64_t> row_h(static_cast<size_t>(m), 0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) row_h[static_cast<size_t>(i)] += hq[static_cast<size_t>(i * k + j)];

    std::vector<double> out(static_cast<size_t>(m * n));
    const double corr = static_cast<double>(k) * static_cast<double>(zh) * static_cast<double>(zw);
    for (int64_t i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i * n);
        for (int64_t j = 0; j < n; ++j) {
            const double acc = static_cast<double>(p[off + static_cast<size_t>(j)]) -
                               static_cast<double>(zh) * static_cast<double>(col_w[static_cast<size_t>(j)]) -
                               static_cast<double>(zw) * static_cast<double>(row_h[static_cast<size_t>(i)]) + corr;
            out[off + static_cast<size_t>(j)] = sh * sw * acc;
        }
    }
    return out;
}

}  // namespace mixq
